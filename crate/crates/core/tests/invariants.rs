use std::collections::BTreeMap;
use std::f64::consts::TAU;

use proptest::prelude::*;

use lossforge::circle::{fit_hanger, internal_q};
use lossforge::domain::{FrequencyTrace, HangerParams, ModeRecord};
use lossforge::extraction::{budget_with, extract};
use lossforge::par::Execution;
use lossforge::participation::{ChannelKind, FactorModel, LossChannel, ModeSpec, ParticipationMatrix};
use lossforge::prediction::{predict, Library, LibraryEntry};
use lossforge::sweep::{plan_linear, plan_phase_uniform, plan_quadratic};
use lossforge::synth::{generate_dataset_with, generate_trace, DatasetTruth, ModeTruth, TraceTruth};
use lossforge::tls::TlsParams;

fn three_mode_matrix(p: [[f64; 3]; 3]) -> ParticipationMatrix {
    let ids = ["surf", "bulk", "seam"];
    ParticipationMatrix::new(
        ["D1", "D2", "C"]
            .iter()
            .enumerate()
            .map(|(k, id)| ModeSpec {
                id: id.to_string(),
                freq_hz: 5e9 + 0.7e9 * k as f64,
            })
            .collect(),
        ids.iter()
            .map(|id| LossChannel {
                id: id.to_string(),
                kind: ChannelKind::for_id(id).unwrap(),
            })
            .collect(),
        p.iter().map(|r| r.to_vec()).collect(),
    )
    .unwrap()
}

fn is_symmetric(points: &[f64], center: f64, span: f64) -> bool {
    let n = points.len();
    (0..n).all(|k| ((points[k] - center) + (points[n - 1 - k] - center)).abs() <= 1e-9 * span)
}

proptest! {
    #[test]
    fn sweep_plans_are_symmetric_ascending_and_span_exact(
        center in 1e9f64..10e9,
        frac in 1e-6f64..1e-2,
        weight in 1e-3f64..50.0,
        half in 3usize..200,
    ) {
        let span = frac * center;
        let n = 2 * half + 1;
        for plan in [
            plan_phase_uniform(center, span, weight, n).unwrap(),
            plan_quadratic(center, span, n).unwrap(),
            plan_linear(center, span, n).unwrap(),
        ] {
            let p = &plan.points;
            prop_assert_eq!(p.len(), n);
            prop_assert!(p.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(is_symmetric(p, center, span));
            prop_assert!((p[0] - (center - span / 2.0)).abs() <= 1e-12 * center);
            prop_assert!((p[n - 1] - (center + span / 2.0)).abs() <= 1e-12 * center);
        }
    }

    #[test]
    fn phase_uniform_gaps_grow_away_from_center(weight in 0.5f64..50.0, half in 3usize..100) {
        let plan = plan_phase_uniform(5e9, 1e6, weight, 2 * half + 1).unwrap();
        let gaps: Vec<f64> = plan.points.windows(2).map(|w| w[1] - w[0]).collect();
        let upper = &gaps[half..];
        prop_assert!(upper.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)));
    }

    #[test]
    fn budget_reconstructs_total_loss(
        p in prop::array::uniform3(prop::array::uniform3(1e-6f64..1.0)),
        g in prop::array::uniform3(1e-9f64..1e-2),
    ) {
        let m = three_mode_matrix(p);
        let factors: BTreeMap<&str, f64> = [("surf", g[0]), ("bulk", g[1]), ("seam", g[2])].into();
        let b = budget_with(&m, |id, _| factors.get(id).copied()).unwrap();
        for (j, mb) in b.modes.iter().enumerate() {
            let direct: f64 = (0..3).map(|i| p[j][i] * g[i]).sum();
            let sum: f64 = mb.channels.values().map(|c| c.loss).sum();
            let frac: f64 = mb.channels.values().map(|c| c.fraction).sum();
            prop_assert!((mb.total_loss - direct).abs() <= 1e-12 * direct);
            prop_assert!((sum - direct).abs() <= 1e-12 * direct);
            prop_assert!((frac - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn extraction_inverts_noiseless_forward_model(
        g in prop::array::uniform3(1e-8f64..1e-3),
        seed_rows in prop::array::uniform3(prop::array::uniform3(0.05f64..1.0)),
    ) {
        // Diagonally dominant participations keep the system well conditioned.
        let mut p = seed_rows;
        for (i, row) in p.iter_mut().enumerate() {
            row[i] += 3.0;
        }
        let scale = [1e-4, 0.25, 1e-3];
        let m = three_mode_matrix([
            [p[0][0] * scale[0], p[0][1] * scale[1], p[0][2] * scale[2]],
            [p[1][0] * scale[0], p[1][1] * scale[1], p[1][2] * scale[2]],
            [p[2][0] * scale[0], p[2][1] * scale[1], p[2][2] * scale[2]],
        ]);
        let records: Vec<ModeRecord> = m
            .modes()
            .iter()
            .enumerate()
            .map(|(j, md)| {
                let loss: f64 = (0..3).map(|i| m.value(j, i) * g[i]).sum();
                let q = 1.0 / loss;
                ModeRecord::new(md.id.clone(), md.freq_hz, q, 1e-3 * q).unwrap()
            })
            .collect();
        let set = extract(&m, &records, &BTreeMap::new()).unwrap();
        for (i, id) in ["surf", "bulk", "seam"].iter().enumerate() {
            let v = set.factors[*id].value;
            prop_assert!((v - g[i]).abs() <= 1e-6 * g[i] + 1e-9 * set.factors[*id].sigma, "{}: {} vs {}", id, v, g[i]);
        }
    }

    #[test]
    fn predicted_t1_is_q_over_omega(
        p in 1e-6f64..1.0,
        g in 1e-9f64..1e-3,
        f in 1e9f64..12e9,
    ) {
        let m = ParticipationMatrix::new(
            vec![ModeSpec { id: "q".into(), freq_hz: f }],
            vec![LossChannel { id: "bulk".into(), kind: ChannelKind::for_id("bulk").unwrap() }],
            vec![vec![p]],
        )
        .unwrap();
        let lib: Library = BTreeMap::from([(
            "bulk".to_string(),
            LibraryEntry { factor: FactorModel::constant(g, 0.1 * g), provenance: String::new() },
        )]);
        let mp = &predict(&m, &lib).unwrap().modes[0];
        prop_assert!((mp.q_int_predicted * p * g - 1.0).abs() <= 1e-12);
        prop_assert!((mp.t1_predicted - mp.q_int_predicted / (TAU * f)).abs() <= 1e-12 * mp.t1_predicted);
        prop_assert!((mp.t1_sigma / mp.t1_predicted - 0.1).abs() <= 1e-9);
    }

    #[test]
    fn synthetic_traces_are_seed_deterministic(seed in any::<u64>(), stream in 0u64..1000, snr in 10.0f64..60.0) {
        let params = HangerParams {
            fr: 6e9,
            q_loaded: 2e5,
            q_coupling_mag: 4e5,
            phi: 0.2,
            amplitude_a: 0.9,
            alpha: 1.0,
            tau: 10e-9,
        };
        let plan = plan_phase_uniform(6e9, 5.0 * 6e9 / 2e5, 5.0, 51).unwrap();
        let truth = TraceTruth {
            params,
            noise_rms: 0.9 * 10f64.powf(-snr / 20.0),
            seed,
            stream,
            power: None,
            label: String::new(),
        };
        let a = generate_trace(&truth, &plan).unwrap();
        let b = generate_trace(&truth, &plan).unwrap();
        prop_assert_eq!(a.s21(), b.s21());
        let other = generate_trace(&TraceTruth { stream: stream + 1, ..truth.clone() }, &plan).unwrap();
        prop_assert_ne!(a.s21(), other.s21());
    }
}

#[test]
fn dataset_is_identical_across_execution_modes() {
    let m = three_mode_matrix([[2e-4, 0.9, 1e-5], [1e-4, 0.95, 2e-5], [3e-4, 0.5, 5e-4]]);
    let mode = |qc: f64| ModeTruth {
        q_coupling: qc,
        phi: 0.1,
        amplitude: 1.0,
        alpha: 0.2,
        tau: 3e-9,
        internal_loss: None,
    };
    let truth = DatasetTruth {
        seed: 42,
        snr_db: 30.0,
        powers_dbm: vec![-150.0, -130.0, -110.0],
        sweep_points: 51,
        sweep_weight: 5.0,
        loss_factors: BTreeMap::from([
            ("surf".to_string(), FactorModel::constant(3e-4, 0.0)),
            ("bulk".to_string(), FactorModel::constant(1e-8, 0.0)),
            ("seam".to_string(), FactorModel::constant(5e-3, 0.0)),
        ]),
        tls_channels: BTreeMap::new(),
        modes: BTreeMap::from([("D1".into(), mode(1e6)), ("D2".into(), mode(2e6)), ("C".into(), mode(5e5))]),
    };
    let seq = generate_dataset_with(Execution::Sequential, &truth, &m).unwrap();
    let par = generate_dataset_with(Execution::default(), &truth, &m).unwrap();
    assert_eq!(seq.len(), 9);
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!(a.trace.s21(), b.trace.s21());
        assert_eq!(a.operating_point, b.operating_point);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn noiseless_hanger_fit_recovers_parameters(
        fr in 3e9f64..8e9,
        log_ql in 3.0f64..7.0,
        ratio in 1.2f64..50.0,
        phi in -0.7f64..0.7,
        amplitude in 0.1f64..2.0,
        alpha in -3.0f64..3.0,
        tau in 0.0f64..40e-9,
    ) {
        let p = HangerParams {
            fr,
            q_loaded: 10f64.powf(log_ql),
            q_coupling_mag: ratio * 10f64.powf(log_ql),
            phi,
            amplitude_a: amplitude,
            alpha,
            tau,
        };
        let plan = plan_phase_uniform(fr, 5.0 * fr / p.q_loaded, 5.0, 101).unwrap();
        let z = plan.points.iter().map(|&f| p.evaluate(f)).collect();
        let trace = FrequencyTrace::new(plan.points.clone(), z, None, "").unwrap();
        let fit = fit_hanger(&trace).unwrap();
        let q = &fit.params;
        prop_assert!((q.fr / fr - 1.0).abs() < 1e-9);
        prop_assert!((q.q_loaded / p.q_loaded - 1.0).abs() < 1e-5);
        prop_assert!((q.q_coupling_mag / p.q_coupling_mag - 1.0).abs() < 1e-5);
        prop_assert!((q.phi - phi).abs() < 1e-5);
        let (qi, _) = internal_q(&fit).unwrap();
        let qi_true = 1.0 / (1.0 / p.q_loaded - phi.cos() / p.q_coupling_mag);
        prop_assert!((qi / qi_true - 1.0).abs() < 1e-4);
    }

    #[test]
    fn tls_loss_is_monotone_in_photon_number(
        q0 in 0.0f64..1e-4,
        a in 1e-7f64..1e-3,
        nc in 1e-2f64..1e4,
        beta in 0.1f64..1.5,
        n1 in 1e-3f64..1e6,
        k in 1.0f64..1e3,
    ) {
        let t = TlsParams { q0_inv: q0, tls_amplitude: a, n_critical: nc, beta };
        prop_assert!(t.loss_at(n1 * k) <= t.loss_at(n1));
        prop_assert!(t.loss_at(n1) <= q0 + a + 1e-18);
        prop_assert!(t.loss_at(n1) >= q0);
    }
}
