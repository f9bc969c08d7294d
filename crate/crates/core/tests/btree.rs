use std::collections::VecDeque;

use cobos_core::btree::{
    robot_tree, tick, Blackboard, BtNode, RobotAction, RobotAgent, RobotView, TickStatus, World, EVADE,
    EXECUTE_FRONT_TASK, GO_HOME, HUMAN_CLOSE, TASK_QUEUED,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Enqueue(usize),
    Tick { close: bool },
    Finish,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![(0usize..6).prop_map(Op::Enqueue), any::<bool>().prop_map(|close| Op::Tick { close }), Just(Op::Finish),]
}

/// Counts how many action leaves report `Running` in one pass.
struct Counting {
    close: bool,
    queued: bool,
    running: usize,
}

impl World for Counting {
    fn condition(&mut self, id: &str, _: &Blackboard) -> Option<bool> {
        match id {
            HUMAN_CLOSE => Some(self.close),
            TASK_QUEUED => Some(self.queued),
            _ => None,
        }
    }

    fn action(&mut self, id: &str, _: &mut Blackboard) -> Option<TickStatus> {
        match id {
            EVADE | EXECUTE_FRONT_TASK | GO_HOME => {
                self.running += 1;
                Some(TickStatus::Running)
            }
            _ => None,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    /// The robot agrees with a plain FIFO model: evasion wins whenever a human
    /// is close, otherwise the current task or the oldest queued one runs.
    #[test]
    fn robot_follows_a_fifo_model(ops in prop::collection::vec(op(), 1..60)) {
        let mut robot = RobotAgent::new();
        let mut queue: VecDeque<usize> = VecDeque::new();
        let mut current: Option<usize> = None;
        let mut order = Vec::new();
        for op in ops {
            match op {
                Op::Enqueue(t) => {
                    robot.blackboard.enqueue(t);
                    if current != Some(t) && !queue.contains(&t) {
                        queue.push_back(t);
                    }
                }
                Op::Finish => {
                    prop_assert_eq!(robot.blackboard.finish_current(), current.take());
                }
                Op::Tick { close } => {
                    let action = robot.tick(&RobotView { human_close: close, undone: Vec::new() }).unwrap();
                    let expected = if close {
                        RobotAction::Evade
                    } else {
                        if current.is_none() {
                            current = queue.pop_front();
                            order.extend(current);
                        }
                        current.map_or(RobotAction::GoHome, RobotAction::Execute)
                    };
                    prop_assert_eq!(action, expected);
                }
            }
            prop_assert_eq!(robot.blackboard.current(), current);
            prop_assert_eq!(robot.blackboard.queue().collect::<Vec<_>>(), Vec::from(queue.clone()));
        }
        prop_assert_eq!(robot.executed(), &order[..]);
    }

    #[test]
    fn exactly_one_action_runs_per_tick(close in any::<bool>(), queued in any::<bool>()) {
        let mut world = Counting { close, queued, running: 0 };
        let status = tick(&robot_tree(), &mut Blackboard::new(), &mut world).unwrap();
        prop_assert_eq!(status, TickStatus::Running);
        prop_assert_eq!(world.running, 1);
    }
}

#[test]
fn evasion_resumes_the_same_task() {
    let mut robot = RobotAgent::new();
    robot.blackboard.enqueue(7);
    robot.blackboard.enqueue(8);
    let calm = RobotView::default();
    let close = RobotView { human_close: true, undone: Vec::new() };
    assert_eq!(robot.tick(&calm), Ok(RobotAction::Execute(7)));
    assert_eq!(robot.tick(&close), Ok(RobotAction::Evade));
    assert_eq!(robot.tick(&close), Ok(RobotAction::Evade));
    assert_eq!(robot.tick(&calm), Ok(RobotAction::Execute(7)));
    assert_eq!(robot.executed(), &[7]);
}

#[test]
fn trees_round_trip_through_json() {
    let tree = robot_tree();
    let back: BtNode = serde_json::from_str(&serde_json::to_string(&tree).unwrap()).unwrap();
    assert_eq!(back, tree);
    assert!(back.validate().is_ok());
}
