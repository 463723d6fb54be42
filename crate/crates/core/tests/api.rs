use approx::assert_relative_eq;
use congestion_core::bnb::{solve_som, solve_uem_bnb, BnbStatus};
use congestion_core::evolution::{evolve, Verdict};
use congestion_core::fdgen::LinkParams;
use congestion_core::io::{fixture_dir, load_demands, load_network, load_state, NetworkFile, RunReport};
use congestion_core::network::{build_network, conservation_residual, aggregate_by_origin, DemandTable, LinkIdx, LinkSpec, StateVector};
use congestion_core::{f32 as single, BnbConfig, EvolutionConfig};

fn two_link<T: congestion_core::Scalar>() -> (congestion_core::network::Network<T>, DemandTable<T>, StateVector) {
    let p = LinkParams {
        alpha: T::lit(1e-5),
        beta: T::lit(240.0),
        gamma: T::lit(-0.1),
        t_free: T::lit(0.025),
        q_max: T::lit(1600.0),
        q_cr: T::lit(1680.0),
    };
    let spec = |id: &str| LinkSpec {
        id: id.into(),
        tail: "o".into(),
        head: "d".into(),
        length: T::one(),
        params: p,
    };
    let net = build_network(["o", "d"], vec![spec("1"), spec("2")]).unwrap();
    let dem = DemandTable::new(&net, [("o", "d", T::lit(1000.0))]).unwrap();
    let state = StateVector::with_congested(&net, &[LinkIdx(1)]);
    (net, dem, state)
}

#[test]
fn two_link_optimum_in_both_precisions() {
    let (net, dem, state) = two_link::<f64>();
    let run = solve_uem_bnb(&net, &dem, &state, &BnbConfig::default()).unwrap();
    assert_eq!(run.status, BnbStatus::Optimal);
    assert_relative_eq!(run.objective().unwrap(), 27.918, epsilon = 1e-3);

    let (net, dem, state) = two_link::<f32>();
    let cfg = single::BnbConfig::default();
    let run = solve_uem_bnb(&net, &dem, &state, &cfg).unwrap();
    assert_ne!(run.status, BnbStatus::Infeasible);
    let x = run.incumbent.as_ref().unwrap().flows.aggregate[0];
    assert!((x - 940.0).abs() < 0.5, "f32 flow {x}");
    assert!((run.objective().unwrap() - 27.918).abs() < 1e-2);
}

#[test]
fn fig5_som_conserves_and_beats_ue() {
    let d = fixture_dir();
    let net = load_network::<f64>(&d.join("fig5.network.json")).unwrap().network;
    let dem = load_demands(&d.join("fig5.demands.json"), &net).unwrap();
    let state = StateVector::all_uncongested(net.num_links());
    let som = solve_som(&net, &dem, &state, &BnbConfig::default()).unwrap();
    for (k, c) in aggregate_by_origin(&dem).iter().enumerate() {
        let r = conservation_residual(&net, c, &som.flows.commodity_flows[k]);
        assert!(r.iter().all(|v| v.abs() <= 1e-6 * dem.total()));
    }
    // total travel time at the user equilibrium is never below the optimum
    let ue = solve_uem_bnb(&net, &dem, &state, &BnbConfig::default()).unwrap();
    let x = &ue.incumbent.unwrap().flows.aggregate;
    let ue_ttt: f64 = net
        .links()
        .iter()
        .enumerate()
        .map(|(a, l)| x[a] * (l.params.t_free + l.params.alpha * x[a]))
        .sum();
    assert!(som.objective <= ue_ttt + 1e-6 * ue_ttt);
}

#[test]
fn fig4_state_and_network_files_agree() {
    let d = fixture_dir();
    let loaded = load_network::<f64>(&d.join("fig4.network.json")).unwrap();
    let state = load_state(Some(&d.join("fig4.state.json")), &loaded.network).unwrap();
    assert_eq!(state.congested().len(), 12);
    let file = NetworkFile::from_network(&loaded.network, loaded.name.clone());
    assert_eq!(file.links.len(), 30);
    assert!(load_state(None, &loaded.network).unwrap().congested().is_empty());
}

#[test]
fn evolution_report_survives_serialisation() {
    let d = fixture_dir();
    let net = load_network::<f64>(&d.join("one-link.network.json")).unwrap().network;
    let dem = load_demands(&d.join("one-link-1680.demands.json"), &net).unwrap();
    let cfg = EvolutionConfig::default();
    let ev = evolve(&net, &dem, &cfg).unwrap();
    assert_eq!(ev.verdict, Verdict::Disabled(2));
    let r = RunReport::from_evolution(&net, None, &ev, &cfg);
    let back = RunReport::from_json(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert_eq!(back.verdict, Some(Verdict::Disabled(2)));
}
