mod common;

use common::oracle::resimulate;
use mrlco_core::baselines::{all_local, greedy_schedule, heft_schedule, optimal_schedule};
use mrlco_core::dag::{compute_rank, embed_dag, generate_dag, DagApp, GeneratorConfig, RankedDag, TaskProfile};
use mrlco_core::rng;
use mrlco_core::sim::{evaluate_plan, Action, OffloadEnv, RewardScale, SchedulePlan, ScheduleState, SystemParams};
use proptest::prelude::*;

fn instance(n: usize, fat: f64, density: f64, rate: f64, seed: u64) -> (RankedDag, SystemParams) {
    let cfg = GeneratorConfig {
        n,
        fat,
        density,
        seed,
        ..Default::default()
    };
    let dag = generate_dag(&cfg, &mut rng::stream(seed, &[])).unwrap();
    let params = SystemParams::default().with_rate(rate).unwrap();
    (compute_rank(&dag, &params), params)
}

fn plan_from(bits: u64, n: usize) -> SchedulePlan {
    SchedulePlan::new((0..n).map(|i| Action::from_bit(bits >> i & 1 == 1)).collect())
}

fn arb_instance(max_n: usize) -> impl Strategy<Value = (RankedDag, SystemParams, u64)> {
    (1..=max_n, 0.1..1.0f64, 0.1..1.0f64, 1e6..3e7f64, any::<u64>(), any::<u64>())
        .prop_map(|(n, fat, density, rate, seed, bits)| {
            let (r, p) = instance(n, fat, density, rate, seed);
            (r, p, bits)
        })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn plan_evaluation_matches_resimulation((r, p, bits) in arb_instance(12)) {
        let plan = plan_from(bits, r.len());
        let a = evaluate_plan(&r, &plan, &p).unwrap();
        prop_assert!(rel(a, resimulate(&r, &plan, &p)) <= 1e-12);
    }

    #[test]
    fn rewards_telescope_and_stay_nonpositive((r, p, bits) in arb_instance(12)) {
        let plan = plan_from(bits, r.len());
        let mut env = OffloadEnv::new(&r, &p, RewardScale::MeanLocal);
        env.reset();
        let mut sum = 0.0;
        for &a in &plan.decisions {
            let s = env.step(a).unwrap();
            prop_assert!(s.reward <= 0.0);
            sum += s.reward;
        }
        let total = evaluate_plan(&r, &plan, &p).unwrap();
        prop_assert!(rel(-env.scale() * sum, total) <= 1e-9);
        prop_assert_eq!(env.latency().unwrap(), total);
    }

    #[test]
    fn resources_never_free_up((r, p, bits) in arb_instance(12)) {
        let plan = plan_from(bits, r.len());
        let mut s = ScheduleState::new(r.len());
        let mut last = (0.0, 0.0, 0.0, 0.0);
        for &a in &plan.decisions {
            s.advance(&r, &p, a).unwrap();
            let t = &s.timeline;
            let now = (t.avail_ul, t.avail_s, t.avail_dl, t.avail_ue);
            prop_assert!(now.0 >= last.0 && now.1 >= last.1 && now.2 >= last.2 && now.3 >= last.3);
            last = now;
        }
    }

    #[test]
    fn optimum_dominates((r, p, bits) in arb_instance(10)) {
        let (best_plan, best) = optimal_schedule(&r, &p, 20).unwrap();
        prop_assert_eq!(evaluate_plan(&r, &best_plan, &p).unwrap(), best);
        let others = [
            heft_schedule(&r, &p),
            greedy_schedule(&r, &p).unwrap(),
            all_local(&r),
            plan_from(bits, r.len()),
        ];
        for plan in &others {
            prop_assert!(best <= evaluate_plan(&r, plan, &p).unwrap());
        }
    }

    #[test]
    fn rank_order_is_topological((r, _p, _bits) in arb_instance(20)) {
        for pos in 0..r.len() {
            prop_assert!(r.parents_at(pos).iter().all(|&q| q < pos));
            prop_assert!(r.children_at(pos).iter().all(|&q| q > pos));
        }
        for w in r.order.windows(2) {
            prop_assert!(r.rank[w[0]] >= r.rank[w[1]]);
        }
    }

    #[test]
    fn embeddings_are_bounded((r, _p, _bits) in arb_instance(20)) {
        let cfg = GeneratorConfig { pad_width: 20, ..Default::default() };
        let e = embed_dag(&r, &cfg).unwrap();
        prop_assert_eq!(e.len(), r.len());
        for t in &e {
            let (head, slots) = t.as_slice().split_at(4);
            prop_assert_eq!(slots.len(), 2 * cfg.pad_width);
            prop_assert!(head.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!(slots.iter().all(|&x| x == -1.0 || (x >= 0.0 && x < r.len() as f64 && x.fract() == 0.0)));
        }
    }
}

#[test]
fn resimulation_reproduces_hand_worked_cells() {
    let p = SystemParams::new(1e9, 1e10, 1, 8e6, 8e6).unwrap();
    let t = TaskProfile::new(1e8, 4e3, 4e3).unwrap();
    let r = compute_rank(&DagApp::new(vec![t, t], vec![]).unwrap(), &p);
    for (bits, want) in [([1, 1], 28.0), ([0, 0], 200.0), ([0, 1], 100.0), ([1, 0], 100.0)] {
        let plan = SchedulePlan::from_bits(&bits).unwrap();
        assert_eq!(resimulate(&r, &plan, &p), want);
        assert_eq!(evaluate_plan(&r, &plan, &p).unwrap(), want);
    }
}
