//! Inference readings on the wrong side of an open bound are contract
//! violations; the same readings moved inside the bound are accepted.

use chartext_core::config::Config;
use chartext_core::llm::{PromptPack, ScriptedBackend, Session, Stage, StageErrorKind};
use chartext_core::testkit::bound_violation;
use rand::rngs::StdRng;
use rand::SeedableRng;

#[test]
fn bound_violations_are_contract_violations() {
    let config = Config::default();
    let prompts = PromptPack::builtin();
    let mut rng = StdRng::seed_from_u64(0xb0);
    for _ in 0..200 {
        let case = bound_violation(&mut rng);
        assert!(case.table.validate(&case.context).is_empty());

        let backend = ScriptedBackend::new();
        for _ in 0..=config.backend.max_retries {
            backend.push(Stage::InferValues, &case.violating);
        }
        let mut session = Session::new(&backend, &prompts, &config);
        let err = session.infer_values(&case.table, &case.context).unwrap_err();
        assert!(matches!(err.kind, StageErrorKind::ContractViolation(_)), "{err}\n{}", case.violating);

        let backend = ScriptedBackend::new();
        backend.push(Stage::InferValues, &case.corrected);
        let mut session = Session::new(&backend, &prompts, &config);
        if let Err(e) = session.infer_values(&case.table, &case.context) {
            panic!("{e}\n{}", case.corrected);
        }
    }
}
