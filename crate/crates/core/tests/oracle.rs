mod common;

use anchordiff::{decode_synthetic, AnchorSpec, DecodeConfig, Error, ModulationParams, Strategy, TokenId};
use common::{random_case, simulate, vocab, Case, Gen};

fn check(case: &Case) {
    let out = decode_synthetic(&case.config, &case.model).unwrap();
    let expect = simulate(case);
    assert_eq!(out.trace.steps, expect, "case {case:#?}");
}

#[test]
fn test_random_cases_match_oracle() {
    let mut g = Gen::new(11);
    for _ in 0..300 {
        check(&random_case(&mut g));
    }
}

#[test]
fn test_every_strategy_with_anchor_and_modulation() {
    let mut g = Gen::new(3);
    for strategy in Strategy::ALL {
        for length in [8, 12, 16] {
            for steps in [length - 2, length / 2, length / 4] {
                let anchor = AnchorSpec::new(vec![TokenId(60), TokenId(61)], 1);
                let mut model = common::random_model(&mut g, length, &anchor.tokens);
                model.eot_cascade = false;
                let mut config = DecodeConfig::new(length, vocab());
                config.steps = steps;
                config.strategy = strategy;
                config.anchor = anchor;
                config.modulation = Some(ModulationParams::default());
                check(&Case { config, model });
            }
        }
    }
}

#[test]
fn test_infeasible_budget_rejected() {
    let mut config = DecodeConfig::new(8, vocab());
    config.steps = 8;
    config.anchor = AnchorSpec::new(vec![TokenId(60), TokenId(61)], 0);
    let model = common::random_model(&mut Gen::new(1), 8, &config.anchor.tokens);
    assert!(matches!(decode_synthetic(&config, &model), Err(Error::Config(_))));
}
