//! End-to-end runs of the simulator and the aging loop.

use pairsim::analytic::AffineSystem;
use pairsim::coupled::{self, AgingConfig, AgingMode, CycleDuration, Termination, Verdict};
use pairsim::degradation::{DegradationParams, RateLaw};
use pairsim::simulator::{self, CellPair, Phase, Protocol, SimConfig};
use pairsim::{AffineOcv, BundledCurve, CellParams};

fn reference_cells() -> [CellParams; 2] {
    [
        CellParams::from_ah_mohm(4.3, 136.0).unwrap(),
        CellParams::from_ah_mohm(3.0, 150.0).unwrap(),
    ]
}

#[test]
fn long_discharge_settles_at_the_steady_state() {
    let [c1, c2] = reference_cells();
    let affine = AffineOcv::new(1.2, 3.0).unwrap();
    let sys = AffineSystem::new(c1, c2, affine);
    let horizon = 20.0 * sys.tau();
    let protocol = Protocol {
        phases: vec![Phase::CcTimed {
            current_a: 3.0,
            duration_s: horizon,
        }],
        cycles: 1,
    };
    let mut config = SimConfig::new(CellPair::shared(c1, c2, affine.into()), 0.5, protocol, [0.9, 0.9]);
    // the linear model is evaluated past the physical SOC range on purpose
    config.soc_guard = None;
    let trace = simulator::run(&config).unwrap();
    let end = trace.samples.last().unwrap();
    assert!((end.dz() - (-4.62e-2)).abs() < 1e-3, "dz {}", end.dz());
    assert!((end.di() - (-0.534)).abs() < 1e-3, "di {}", end.di());
    let ss = sys.steady_state(3.0);
    assert!((end.dz() - ss.dz_ss).abs() < 1e-3 && (end.di() - ss.di_ss).abs() < 1e-3);
}

#[test]
fn cccv_traces_conserve_charge_and_voltage() {
    let cells = [
        CellParams::from_ah_mohm(4.28, 45.5).unwrap(),
        CellParams::from_ah_mohm(3.0, 50.0).unwrap(),
    ];
    for curve in [BundledCurve::NmcGrLike, BundledCurve::LfpGrLike] {
        let ocv = curve.curve();
        let (v_min, v_max) = ocv.voltage_window();
        let pair = CellPair::shared(cells[0], cells[1], ocv.clone());
        let protocol = Protocol::cccv(3.0, v_max, 0.6, v_min, 2);
        let trace = simulator::run(&SimConfig::new(pair, 1.0, protocol, [0.2, 0.4])).unwrap();
        let balance = trace.charge_balance(0, trace.len() - 1);
        assert!(balance.relative_error() < 1e-6, "{curve}: {balance:?}");
        for s in &trace.samples {
            for (k, cell) in cells.iter().enumerate() {
                let u = ocv.eval_extended(s.z[k]);
                assert!((u - s.i[k] * cell.r() - s.v_t).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn high_fidelity_aging_smoke() {
    let cells = reference_cells();
    let ocv = BundledCurve::NmcGrLike.curve();
    let (v_min, v_max) = ocv.voltage_window();
    let law = RateLaw::Current { gamma: 1e-3 };
    let params = DegradationParams::new(0.5, 2e-6, 0.0, law).unwrap();
    let config = AgingConfig {
        cells,
        degradation: [params, params],
        q_min: 0.5 * 3.0 * 3600.0,
        max_cycles: 8,
        mode: AgingMode::HighFidelity {
            ocv: [ocv.clone(), ocv],
            protocol: Protocol::cccv(3.0, v_max, 0.6, v_min, 1),
            dt: 2.0,
            initial_soc: [0.5, 0.5],
        },
    };
    let run = coupled::run_aging(&config).unwrap();
    assert_eq!(run.termination, Termination::MaxCycles);
    assert_eq!(run.records.len(), 9);
    for w in run.records.windows(2) {
        for k in 0..2 {
            assert!(w[1].q[k] < w[0].q[k]);
            assert!(w[1].r[k] >= w[0].r[k]);
        }
    }
    // the fresh, larger cell carries more current and fades faster
    let dl = run.records[1].delta_l.unwrap();
    assert!(dl[0] > dl[1]);
}

#[test]
fn fast_current_law_converges_for_each_exponent() {
    for (p, gamma) in [(0.5, 1.87), (1.0, 4e-4), (1.5, 8.5e-8)] {
        let law = RateLaw::Current { gamma };
        let params = DegradationParams {
            p,
            lambda1: 2e-6,
            lambda2: 0.0,
            rate_law: law,
            allow_accelerating: p > 1.0,
        };
        let config = AgingConfig {
            cells: reference_cells(),
            degradation: [params, params],
            q_min: 0.0,
            max_cycles: 20_000,
            mode: AgingMode::Fast {
                alpha: 1.2,
                current_a: 3.0,
                cycle_duration: CycleDuration::Fixed,
            },
        };
        let run = coupled::run_aging(&config).unwrap();
        assert_eq!(run.termination, Termination::FloorReached, "p {p}");
        assert!(run.records.len() > 2000);
        let [a, b] = run.floor_cycle;
        assert!(a.zip(b).is_some_and(|(a, b)| a.abs_diff(b) <= 1), "p {p}: {:?}", run.floor_cycle);
        for w in run.records.windows(2) {
            assert!(w[1].dq().abs() <= w[0].dq().abs());
        }
        let m = coupled::convergence_metrics(&run.rows(), coupled::DEFAULT_WINDOW).unwrap();
        assert_eq!(m.capacity, Verdict::Converging);
        assert_eq!(m.resistance, Verdict::Converging);
    }
}
