mod common;

use proptest::prelude::*;

fn ok(check: common::Check) -> Result<(), TestCaseError> {
    check.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn merge_commutes(seed in any::<u64>()) {
        ok(common::check_commutative(seed))?;
    }

    #[test]
    fn merge_is_total_and_replayable(seed in any::<u64>()) {
        ok(common::check_merge_total(seed))?;
    }

    #[test]
    fn rewrite_preserves_denotation(seed in any::<u64>()) {
        ok(common::check_rewrite(seed))?;
    }

    #[test]
    fn dirty_set_covers_changes(seed in any::<u64>()) {
        ok(common::check_dirty(seed))?;
    }
}
