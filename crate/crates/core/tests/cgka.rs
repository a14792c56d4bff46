mod common;

use common::{toy, Fleet, Op};
use proptest::prelude::*;

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => Just(Op::Add),
        1 => Just(Op::Remove),
        2 => Just(Op::Update),
        1 => Just(Op::ExternalJoin),
    ]
}

/// A step is either one directly committed operation or a batch of proposals.
fn step() -> impl Strategy<Value = Vec<Op>> {
    prop_oneof![op().prop_map(|o| vec![o]), prop::collection::vec(op(), 2..=4)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn members_agree_at_every_epoch(seed in any::<u64>(), steps in prop::collection::vec(step(), 1..30)) {
        let mut f = Fleet::new(toy(), seed);
        for s in steps {
            if s.len() == 1 {
                f.commit_op(s[0]);
            } else {
                f.propose_ops(&s);
            }
            prop_assert_eq!(f.consistent(), Ok(()));
        }
    }

    #[test]
    fn removed_members_stay_locked_out(seed in any::<u64>(), steps in prop::collection::vec(step(), 1..25)) {
        let mut f = Fleet::new(toy(), seed);
        f.commit_op(Op::Add);
        f.commit_op(Op::Add);
        f.commit_op(Op::Remove);
        prop_assert_eq!(f.evicted.len(), 1);
        for s in steps {
            if s.len() == 1 {
                f.commit_op(s[0]);
            } else {
                f.propose_ops(&s);
            }
            prop_assert_eq!(f.evicted_locked_out(), Ok(()));
        }
    }
}

#[test]
fn real_suite_agrees_too() {
    let mut f = Fleet::new(std::sync::Arc::new(mlsim::crypto::RustCryptoProvider), 11);
    for op in [Op::Add, Op::Add, Op::ExternalJoin, Op::Update, Op::Remove, Op::Add, Op::Update] {
        f.commit_op(op);
        f.consistent().unwrap();
    }
    f.propose_ops(&[Op::Add, Op::Update, Op::Remove]);
    f.consistent().unwrap();
    f.evicted_locked_out().unwrap();
}
