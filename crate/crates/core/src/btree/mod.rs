//! A small behavior-tree engine and the tree that drives a robot actor.
//!
//! Trees are plain data ([`BtNode`]); leaves are resolved by id against a
//! [`World`] on every tick. The [`Blackboard`] carries shared values and the
//! robot's task queue, in which first-added tasks have priority.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::TaskIdx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TickStatus {
    Running,
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Sequence,
    Selector,
    /// Ticks every child; fails if any fails, succeeds once all succeed.
    Parallel,
    Condition(String),
    Action(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BtNode {
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<BtNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BtError {
    #[error("no leaf registered under {0:?}")]
    UnknownLeafId(String),
    #[error("{0} node must have children")]
    EmptyComposite(&'static str),
    #[error("leaf {0:?} must not have children")]
    LeafWithChildren(String),
}

impl BtNode {
    pub fn sequence(children: Vec<BtNode>) -> Self {
        Self { kind: NodeKind::Sequence, children }
    }

    pub fn selector(children: Vec<BtNode>) -> Self {
        Self { kind: NodeKind::Selector, children }
    }

    pub fn parallel(children: Vec<BtNode>) -> Self {
        Self { kind: NodeKind::Parallel, children }
    }

    pub fn condition(id: &str) -> Self {
        Self { kind: NodeKind::Condition(id.to_string()), children: Vec::new() }
    }

    pub fn action(id: &str) -> Self {
        Self { kind: NodeKind::Action(id.to_string()), children: Vec::new() }
    }

    /// Composites have children and leaves have none, all the way down.
    pub fn validate(&self) -> Result<(), BtError> {
        match &self.kind {
            NodeKind::Sequence | NodeKind::Selector | NodeKind::Parallel => {
                if self.children.is_empty() {
                    return Err(BtError::EmptyComposite(self.kind_name()));
                }
                self.children.iter().try_for_each(BtNode::validate)
            }
            NodeKind::Condition(id) | NodeKind::Action(id) => {
                if self.children.is_empty() {
                    Ok(())
                } else {
                    Err(BtError::LeafWithChildren(id.clone()))
                }
            }
        }
    }

    fn kind_name(&self) -> &'static str {
        match self.kind {
            NodeKind::Sequence => "Sequence",
            NodeKind::Selector => "Selector",
            NodeKind::Parallel => "Parallel",
            NodeKind::Condition(_) => "Condition",
            NodeKind::Action(_) => "Action",
        }
    }

    fn dump(&self, depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pad = "  ".repeat(depth);
        match &self.kind {
            NodeKind::Condition(id) => writeln!(f, "{pad}Condition({id})")?,
            NodeKind::Action(id) => writeln!(f, "{pad}Action({id})")?,
            _ => writeln!(f, "{pad}{}", self.kind_name())?,
        }
        self.children.iter().try_for_each(|c| c.dump(depth + 1, f))
    }
}

/// Indented one-node-per-line dump.
impl fmt::Display for BtNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.dump(0, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BbValue {
    Bool(bool),
    Int(i64),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Blackboard {
    pub values: BTreeMap<String, BbValue>,
    queue: VecDeque<TaskIdx>,
    current: Option<TaskIdx>,
}

impl Blackboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: BbValue) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&BbValue> {
        self.values.get(key)
    }

    pub fn flag(&self, key: &str) -> bool {
        matches!(self.values.get(key), Some(BbValue::Bool(true)))
    }

    /// Appends a task to the back of the queue unless it is already queued or current.
    pub fn enqueue(&mut self, task: TaskIdx) {
        if self.current != Some(task) && !self.queue.contains(&task) {
            self.queue.push_back(task);
        }
    }

    /// Puts a task back at the front, ahead of everything queued.
    pub fn requeue_front(&mut self, task: TaskIdx) {
        if self.current == Some(task) {
            return;
        }
        self.queue.retain(|&t| t != task);
        self.queue.push_front(task);
    }

    pub fn queue(&self) -> impl Iterator<Item = TaskIdx> + '_ {
        self.queue.iter().copied()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// The task being worked on, if any.
    pub fn current(&self) -> Option<TaskIdx> {
        self.current
    }

    pub fn has_work(&self) -> bool {
        self.current.is_some() || !self.queue.is_empty()
    }

    /// Makes the earliest-added task current unless one already is.
    pub fn take_front(&mut self) -> Option<TaskIdx> {
        if self.current.is_none() {
            self.current = self.queue.pop_front();
        }
        self.current
    }

    /// The current task is finished; it leaves the blackboard.
    pub fn finish_current(&mut self) -> Option<TaskIdx> {
        self.current.take()
    }
}

/// Leaf implementations. Returning `None` means the id is unknown.
pub trait World {
    fn condition(&mut self, id: &str, bb: &Blackboard) -> Option<bool>;
    fn action(&mut self, id: &str, bb: &mut Blackboard) -> Option<TickStatus>;
}

/// One pass over the tree from `node`.
pub fn tick(node: &BtNode, bb: &mut Blackboard, world: &mut dyn World) -> Result<TickStatus, BtError> {
    match &node.kind {
        NodeKind::Sequence => {
            for child in &node.children {
                match tick(child, bb, world)? {
                    TickStatus::Success => continue,
                    other => return Ok(other),
                }
            }
            Ok(TickStatus::Success)
        }
        NodeKind::Selector => {
            for child in &node.children {
                match tick(child, bb, world)? {
                    TickStatus::Failure => continue,
                    other => return Ok(other),
                }
            }
            Ok(TickStatus::Failure)
        }
        NodeKind::Parallel => {
            let mut all_done = true;
            let mut failed = false;
            for child in &node.children {
                match tick(child, bb, world)? {
                    TickStatus::Failure => failed = true,
                    TickStatus::Running => all_done = false,
                    TickStatus::Success => {}
                }
            }
            Ok(if failed {
                TickStatus::Failure
            } else if all_done {
                TickStatus::Success
            } else {
                TickStatus::Running
            })
        }
        NodeKind::Condition(id) => match world.condition(id, bb) {
            Some(true) => Ok(TickStatus::Success),
            Some(false) => Ok(TickStatus::Failure),
            None => Err(BtError::UnknownLeafId(id.clone())),
        },
        NodeKind::Action(id) => world.action(id, bb).ok_or_else(|| BtError::UnknownLeafId(id.clone())),
    }
}

pub const HUMAN_CLOSE: &str = "human_close";
pub const EVADE: &str = "evade";
pub const TASK_QUEUED: &str = "task_queued";
pub const EXECUTE_FRONT_TASK: &str = "execute_front_task";
pub const GO_HOME: &str = "go_home";

/// Evade with high priority, work on queued tasks with middle priority, go
/// home when idle.
pub fn robot_tree() -> BtNode {
    BtNode::selector(vec![
        BtNode::sequence(vec![BtNode::condition(HUMAN_CLOSE), BtNode::action(EVADE)]),
        BtNode::sequence(vec![BtNode::condition(TASK_QUEUED), BtNode::action(EXECUTE_FRONT_TASK)]),
        BtNode::action(GO_HOME),
    ])
}

/// What the robot decided to do for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotAction {
    Evade,
    Execute(TaskIdx),
    GoHome,
}

/// What the robot perceives in one tick.
#[derive(Debug, Clone, Default)]
pub struct RobotView {
    pub human_close: bool,
    /// Previously completed tasks whose effect is no longer in place.
    pub undone: Vec<TaskIdx>,
}

struct RobotWorld<'a> {
    view: &'a RobotView,
    chosen: Option<RobotAction>,
}

impl World for RobotWorld<'_> {
    fn condition(&mut self, id: &str, bb: &Blackboard) -> Option<bool> {
        match id {
            HUMAN_CLOSE => Some(self.view.human_close),
            TASK_QUEUED => Some(bb.has_work()),
            _ => None,
        }
    }

    fn action(&mut self, id: &str, bb: &mut Blackboard) -> Option<TickStatus> {
        match id {
            EVADE => {
                self.chosen = Some(RobotAction::Evade);
                Some(TickStatus::Running)
            }
            EXECUTE_FRONT_TASK => match bb.take_front() {
                Some(t) => {
                    self.chosen = Some(RobotAction::Execute(t));
                    Some(TickStatus::Running)
                }
                None => Some(TickStatus::Failure),
            },
            GO_HOME => {
                self.chosen = Some(RobotAction::GoHome);
                Some(TickStatus::Running)
            }
            _ => None,
        }
    }
}

/// A robot's tree, blackboard, and the order in which it took up tasks.
#[derive(Debug, Clone)]
pub struct RobotAgent {
    tree: BtNode,
    pub blackboard: Blackboard,
    executed: Vec<TaskIdx>,
}

impl Default for RobotAgent {
    fn default() -> Self {
        Self::new()
    }
}

impl RobotAgent {
    pub fn new() -> Self {
        Self { tree: robot_tree(), blackboard: Blackboard::new(), executed: Vec::new() }
    }

    pub fn tree(&self) -> &BtNode {
        &self.tree
    }

    /// Tasks in the order they became current.
    pub fn executed(&self) -> &[TaskIdx] {
        &self.executed
    }

    pub fn tick(&mut self, view: &RobotView) -> Result<RobotAction, BtError> {
        for &t in view.undone.iter().rev() {
            self.blackboard.requeue_front(t);
        }
        let before = self.blackboard.current();
        let mut world = RobotWorld { view, chosen: None };
        tick(&self.tree, &mut self.blackboard, &mut world)?;
        let after = self.blackboard.current();
        if let Some(t) = after {
            if before != after {
                self.executed.push(t);
            }
        }
        Ok(world.chosen.unwrap_or(RobotAction::GoHome))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Leaves with fixed outcomes that count their ticks.
    #[derive(Default)]
    struct Scripted {
        results: BTreeMap<String, TickStatus>,
        ticks: BTreeMap<String, u32>,
    }

    impl Scripted {
        fn with(pairs: &[(&str, TickStatus)]) -> Self {
            Self { results: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(), ..Self::default() }
        }

        fn count(&self, id: &str) -> u32 {
            self.ticks.get(id).copied().unwrap_or(0)
        }
    }

    impl World for Scripted {
        fn condition(&mut self, id: &str, _bb: &Blackboard) -> Option<bool> {
            *self.ticks.entry(id.to_string()).or_default() += 1;
            self.results.get(id).map(|s| *s == TickStatus::Success)
        }

        fn action(&mut self, id: &str, _bb: &mut Blackboard) -> Option<TickStatus> {
            *self.ticks.entry(id.to_string()).or_default() += 1;
            self.results.get(id).copied()
        }
    }

    #[test]
    fn selector_returns_first_non_failure() {
        let tree = BtNode::selector(vec![BtNode::action("fail"), BtNode::action("ok")]);
        let mut w = Scripted::with(&[("fail", TickStatus::Failure), ("ok", TickStatus::Success)]);
        assert_eq!(tick(&tree, &mut Blackboard::new(), &mut w), Ok(TickStatus::Success));
        assert_eq!(w.count("ok"), 1);
    }

    #[test]
    fn sequence_stops_at_running() {
        let tree = BtNode::sequence(vec![BtNode::action("ok"), BtNode::action("run"), BtNode::action("never")]);
        let mut w = Scripted::with(&[
            ("ok", TickStatus::Success),
            ("run", TickStatus::Running),
            ("never", TickStatus::Success),
        ]);
        assert_eq!(tick(&tree, &mut Blackboard::new(), &mut w), Ok(TickStatus::Running));
        assert_eq!(w.count("never"), 0);
    }

    #[test]
    fn parallel_needs_all_children() {
        let tree = BtNode::parallel(vec![BtNode::action("ok"), BtNode::action("run")]);
        let mut w = Scripted::with(&[("ok", TickStatus::Success), ("run", TickStatus::Running)]);
        assert_eq!(tick(&tree, &mut Blackboard::new(), &mut w), Ok(TickStatus::Running));
        w.results.insert("run".into(), TickStatus::Success);
        assert_eq!(tick(&tree, &mut Blackboard::new(), &mut w), Ok(TickStatus::Success));
        w.results.insert("run".into(), TickStatus::Failure);
        assert_eq!(tick(&tree, &mut Blackboard::new(), &mut w), Ok(TickStatus::Failure));
    }

    #[test]
    fn unknown_leaf_is_an_error() {
        let tree = BtNode::sequence(vec![BtNode::condition("nope")]);
        let mut w = Scripted::default();
        assert_eq!(tick(&tree, &mut Blackboard::new(), &mut w), Err(BtError::UnknownLeafId("nope".into())));
    }

    #[test]
    fn structure_is_validated() {
        assert!(robot_tree().validate().is_ok());
        assert!(BtNode::selector(vec![]).validate().is_err());
        let mut leaf = BtNode::action("a");
        leaf.children.push(BtNode::action("b"));
        assert!(leaf.validate().is_err());
    }

    #[test]
    fn robot_tree_dump() {
        let expected = "\
Selector
  Sequence
    Condition(human_close)
    Action(evade)
  Sequence
    Condition(task_queued)
    Action(execute_front_task)
  Action(go_home)
";
        assert_eq!(robot_tree().to_string(), expected);
    }

    #[test]
    fn idle_robot_goes_home() {
        let mut robot = RobotAgent::new();
        assert_eq!(robot.tick(&RobotView::default()), Ok(RobotAction::GoHome));
    }

    #[test]
    fn first_added_task_runs_first() {
        let mut robot = RobotAgent::new();
        robot.blackboard.enqueue(3);
        robot.blackboard.enqueue(5);
        assert_eq!(robot.tick(&RobotView::default()), Ok(RobotAction::Execute(3)));
        assert_eq!(robot.tick(&RobotView::default()), Ok(RobotAction::Execute(3)));
        robot.blackboard.finish_current();
        assert_eq!(robot.tick(&RobotView::default()), Ok(RobotAction::Execute(5)));
        assert_eq!(robot.executed(), &[3, 5]);
    }

    #[test]
    fn evasion_preempts_work() {
        let mut robot = RobotAgent::new();
        robot.blackboard.enqueue(1);
        let close = RobotView { human_close: true, undone: Vec::new() };
        assert_eq!(robot.tick(&close), Ok(RobotAction::Evade));
        assert_eq!(robot.blackboard.current(), None, "task action not ticked while evading");
        assert_eq!(robot.tick(&RobotView::default()), Ok(RobotAction::Execute(1)));
    }

    #[test]
    fn undone_task_is_repaired_first() {
        let mut robot = RobotAgent::new();
        robot.blackboard.enqueue(4);
        let view = RobotView { human_close: false, undone: vec![2] };
        assert_eq!(robot.tick(&view), Ok(RobotAction::Execute(2)));
        robot.blackboard.finish_current();
        assert_eq!(robot.tick(&RobotView::default()), Ok(RobotAction::Execute(4)));
    }
}
