use hcrm_core::franchise::{Chain, FranchiseState, Model, SamplerConfig, TableRule, UnitLikelihood};
use hcrm_core::levy::LevySpec;
use hcrm_core::oracle::{
    compare_report, conditional_rejection_sample, default_eps, CompareThresholds, RejectionConfig,
    SeatingStat,
};

fn chain_stats(rule: TableRule, sizes: &[usize], samples: usize, thin: usize, seed: u64) -> Vec<SeatingStat> {
    let config = SamplerConfig {
        seed,
        resample_hyper: false,
        use_likelihood: false,
        table_rule: rule,
        ..SamplerConfig::default()
    };
    let mut chain = Chain::new(
        Model::gamma_gamma(1.0).unwrap(),
        config,
        FranchiseState::with_sizes(sizes),
        UnitLikelihood::default(),
    )
    .unwrap();
    for _ in 0..200 {
        chain.sweep().unwrap();
    }
    (0..samples)
        .map(|_| {
            for _ in 0..thin {
                chain.sweep().unwrap();
            }
            SeatingStat {
                dishes: chain.state().num_dishes(),
                sorted_totals: chain.state().sorted_dish_customer_totals(),
            }
        })
        .collect()
}

#[test]
fn prior_chain_matches_conditional_oracle() {
    let g = LevySpec::gamma(1.0).unwrap();
    let cfg = RejectionConfig {
        accepted: 20_000,
        seed: 17,
        ..RejectionConfig::default()
    };
    let oracle = conditional_rejection_sample(&g, &g, &[5, 5, 5], default_eps(&g), &cfg).unwrap();
    let collapsed = chain_stats(TableRule::Conditional, &[5, 5, 5], 20_000, 5, 3);
    let report = compare_report(&collapsed, &oracle.stats(), CompareThresholds::default()).unwrap();
    eprintln!("{}", report.to_text());
    let marginal = chain_stats(TableRule::Marginal, &[5, 5, 5], 20_000, 5, 3);
    let r2 = compare_report(&marginal, &oracle.stats(), CompareThresholds::default()).unwrap();
    eprintln!("marginal rule:\n{}", r2.to_text());
    assert!(report.pass);
    // The h-ratio table rule drifts away from the hierarchy's law.
    assert!(r2.tv_dishes > 0.03);
}
