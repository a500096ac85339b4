use mrlco_core::baselines::optimal_schedule;
use mrlco_core::dag::{generate_dag, DagApp, GeneratorConfig, TaskProfile};
use mrlco_core::neural::{NetConfig, ParamLayout, PolicyParams};
use mrlco_core::ppo::{all_steps, collect, gae, inner_update, ppo_objective, trajectory_gae, HyperParams};
use mrlco_core::rng;
use mrlco_core::sim::{Action, RewardScale, SchedulePlan, SystemParams};
use mrlco_core::task::LearningTask;
use proptest::prelude::*;

fn task(n: usize, count: usize, seed: u64, scale: RewardScale) -> LearningTask {
    let cfg = GeneratorConfig {
        n,
        seed,
        ..Default::default()
    };
    let mut r = rng::stream(seed, &[]);
    let dags: Vec<DagApp> = (0..count).map(|_| generate_dag(&cfg, &mut r).unwrap()).collect();
    LearningTask::new("t", &dags, SystemParams::default(), &cfg, scale).unwrap()
}

fn policy(task: &LearningTask, hidden: usize, seed: u64) -> PolicyParams<f64> {
    let l = ParamLayout::new(&NetConfig::small(task.input_width(), hidden)).unwrap();
    PolicyParams::init(l, &mut rng::stream(seed, &[1]))
}

fn exact_hp() -> HyperParams {
    HyperParams {
        normalize_advantages: false,
        trajectories_per_dag: 4,
        ..Default::default()
    }
}

#[test]
fn trajectories_have_episode_shape() {
    let t = task(7, 3, 1, RewardScale::MeanLocal);
    let p = policy(&t, 6, 1);
    let trajs = collect(&p, &t, 5, 9).unwrap();
    assert_eq!(trajs.len(), 15);
    for (k, tr) in trajs.iter().enumerate() {
        assert_eq!(tr.dag, k / 5);
        assert_eq!(tr.len(), 7);
        assert_eq!(tr.rewards.len(), 7);
        assert!(tr.log_probs.iter().all(|&lp| lp.is_finite() && lp <= 0.0));
        let plan = SchedulePlan::new(tr.actions.clone());
        let lat = t.dags[tr.dag].evaluate(&plan).unwrap();
        assert_eq!(lat, tr.latency);
        // undiscounted return telescopes to the scaled latency
        let ret = gae(&tr.rewards, &vec![0.0; 7], 1.0, 1.0).returns[0];
        assert!((-ret * t.dags[tr.dag].scale - lat).abs() <= 1e-9 * lat);
    }
    assert_eq!(trajs, collect(&p, &t, 5, 9).unwrap());
}

#[test]
fn degenerate_policy_repeats_itself() {
    let t = task(6, 2, 2, RewardScale::MeanLocal);
    let mut p = policy(&t, 5, 2);
    let b2 = p.layout().index.policy.b2;
    p.get_mut(b2).copy_from_slice(&[0.0, -1e4]);
    let trajs = collect(&p, &t, 8, 3).unwrap();
    for tr in &trajs {
        assert!(tr.actions.iter().all(|&a| a == Action::Local));
        assert!(tr.log_probs.iter().all(|&lp| lp == 0.0));
        assert_eq!(tr.actions, trajs[tr.dag * 8].actions);
    }
}

#[test]
fn ratio_is_one_at_the_sampling_policy() {
    let t = task(8, 3, 3, RewardScale::MeanLocal);
    let p = policy(&t, 6, 3);
    let hp = exact_hp();
    let trajs = collect(&p, &t, 4, 1).unwrap();
    let adv: Vec<_> = trajs.iter().map(|tr| trajectory_gae(tr, &hp)).collect();
    let batch = all_steps(&trajs);
    let obj = ppo_objective(&p, &t, &trajs, &adv, &batch, &hp).unwrap();
    assert!(obj.ratios.iter().all(|&r| r == 1.0));
    assert_eq!(obj.clipped, 0.0);
    let mean_adv = batch.iter().map(|&(i, j)| adv[i].advantages[j]).sum::<f64>() / batch.len() as f64;
    assert!((obj.surrogate - mean_adv).abs() <= 1e-12 * (1.0 + mean_adv.abs()));
}

#[test]
fn saturated_clip_has_no_policy_gradient() {
    let t = task(4, 1, 4, RewardScale::MeanLocal);
    let p = policy(&t, 5, 4);
    let hp = HyperParams {
        value_coef: 0.0,
        ..exact_hp()
    };
    let mut trajs = collect(&p, &t, 1, 1).unwrap();
    // pretend the sampling policy was less likely, so ratio = 1 + 2ε
    for lp in &mut trajs[0].log_probs {
        *lp -= (1.0 + 2.0 * hp.clip).ln();
    }
    let n = trajs[0].len();
    let adv = vec![mrlco_core::ppo::AdvantageSet {
        advantages: vec![1.0; n],
        returns: vec![0.0; n],
    }];
    let batch = all_steps(&trajs);
    let obj = ppo_objective(&p, &t, &trajs, &adv, &batch, &hp).unwrap();
    for r in &obj.ratios {
        assert!((r - 1.4).abs() < 1e-12);
    }
    assert_eq!(obj.clipped, 1.0);
    assert!(obj.grad.flat().iter().all(|&g| g == 0.0));
    assert!((obj.surrogate - 1.2).abs() < 1e-12);

    // the same ratios with negative advantages take the unclipped branch
    let neg = vec![mrlco_core::ppo::AdvantageSet {
        advantages: vec![-1.0; n],
        returns: vec![0.0; n],
    }];
    let obj = ppo_objective(&p, &t, &trajs, &neg, &batch, &hp).unwrap();
    assert_eq!(obj.clipped, 0.0);
    assert!(obj.grad.norm() > 0.0);
}

#[test]
fn value_loss_vanishes_on_exact_targets() {
    let t = task(5, 1, 5, RewardScale::MeanLocal);
    let p = policy(&t, 5, 5);
    let hp = exact_hp();
    let trajs = collect(&p, &t, 2, 1).unwrap();
    let adv: Vec<_> = trajs
        .iter()
        .map(|tr| mrlco_core::ppo::AdvantageSet {
            advantages: vec![0.5; tr.len()],
            returns: tr.values.clone(),
        })
        .collect();
    let obj = ppo_objective(&p, &t, &trajs, &adv, &all_steps(&trajs), &hp).unwrap();
    assert_eq!(obj.value_loss, 0.0);
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let t = task(4, 2, 6, RewardScale::MeanLocal);
    let p = policy(&t, 4, 6);
    let hp = exact_hp();
    let trajs = collect(&p, &t, 2, 1).unwrap();
    let adv: Vec<_> = trajs.iter().map(|tr| trajectory_gae(tr, &hp)).collect();
    let batch = all_steps(&trajs);
    let obj = ppo_objective(&p, &t, &trajs, &adv, &batch, &hp).unwrap();
    let h = 1e-6;
    for i in (0..p.len()).step_by(7) {
        let mut a = p.clone();
        a.flat_mut()[i] += h;
        let mut b = p.clone();
        b.flat_mut()[i] -= h;
        let fa = ppo_objective(&a, &t, &trajs, &adv, &batch, &hp).unwrap().value;
        let fb = ppo_objective(&b, &t, &trajs, &adv, &batch, &hp).unwrap().value;
        let fd = (fa - fb) / (2.0 * h);
        let an = obj.grad.flat()[i];
        assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "param {i}: {an} vs {fd}");
    }
}

#[test]
fn zero_rate_keeps_parameters_and_traces_every_step() {
    let t = task(6, 2, 7, RewardScale::MeanLocal);
    let p = policy(&t, 5, 7);
    let hp = HyperParams {
        inner_lr: 0.0,
        ..Default::default()
    };
    let out = inner_update(&p, &t, &hp, 3, true).unwrap();
    assert_eq!(out.params, p);
    assert_eq!(out.trace.len(), hp.inner_steps + 1);
    assert!(out.trace.iter().all(|x| *x == p));
}

#[test]
fn minibatches_are_reproducible() {
    let t = task(6, 3, 8, RewardScale::MeanLocal);
    let p = policy(&t, 5, 8);
    let hp = HyperParams {
        minibatch: Some(40),
        trajectories_per_dag: 5,
        ..Default::default()
    };
    let a = inner_update(&p, &t, &hp, 11, false).unwrap();
    let b = inner_update(&p, &t, &hp, 11, false).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, p);
}

#[test]
fn learns_an_obvious_five_task_dag() {
    // compute-heavy tasks with small payloads want the edge host, light
    // tasks with large payloads want the device
    let profile = |heavy: bool| {
        if heavy {
            TaskProfile::new(9e7, 5e3, 5e3).unwrap()
        } else {
            TaskProfile::new(1e7, 5e4, 5e4).unwrap()
        }
    };
    let tasks = [true, false, true, false, true].map(profile).to_vec();
    let dag = DagApp::new(tasks, vec![(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)]).unwrap();
    let cfg = GeneratorConfig {
        n: 5,
        ..Default::default()
    };
    let params = SystemParams::default();
    let t = LearningTask::new("five", &[dag], params, &cfg, RewardScale::MeanLocal).unwrap();
    let (best, best_lat) = optimal_schedule(&t.dags[0].ranked, &params, 20).unwrap();
    let mut p = policy(&t, 32, 9);
    let hp = HyperParams::default();
    assert_ne!(t.greedy_plans(&p).unwrap()[0], best, "already optimal at init");
    let mut reached = None;
    for k in 0..200 {
        p = inner_update(&p, &t, &hp, k, false).unwrap().params;
        if t.greedy_plans(&p).unwrap()[0] == best {
            reached = Some(k);
            break;
        }
    }
    assert!(reached.is_some());
    assert!((t.evaluate_greedy(&p).unwrap() - best_lat).abs() < 1e-9);
}

proptest! {
    #[test]
    fn gae_lambda_one_is_return_minus_value(
        rv in prop::collection::vec((-5.0f64..0.0, -3.0f64..3.0), 1..30),
        gamma in 0.5f64..1.0,
    ) {
        let (r, v): (Vec<f64>, Vec<f64>) = rv.into_iter().unzip();
        let a = gae(&r, &v, gamma, 1.0);
        for t in 0..r.len() {
            let direct: f64 = r[t..].iter().enumerate().map(|(k, x)| gamma.powi(k as i32) * x).sum();
            prop_assert!((a.returns[t] - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
            let want = direct - v[t];
            prop_assert!((a.advantages[t] - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn surrogate_respects_the_clip_bound(shift in -1.0f64..1.0, sign in prop::bool::ANY) {
        let t = task(4, 1, 10, RewardScale::MeanLocal);
        let p = policy(&t, 4, 10);
        let hp = HyperParams { value_coef: 0.0, ..exact_hp() };
        let mut trajs = collect(&p, &t, 1, 2).unwrap();
        for lp in &mut trajs[0].log_probs {
            *lp += shift;
        }
        let a = if sign { 1.0 } else { -1.0 };
        let n = trajs[0].len();
        let adv = vec![mrlco_core::ppo::AdvantageSet { advantages: vec![a; n], returns: vec![0.0; n] }];
        let obj = ppo_objective(&p, &t, &trajs, &adv, &all_steps(&trajs), &hp).unwrap();
        let bound = obj.ratios.iter()
            .map(|r| (r * a).max((1.0 - hp.clip) * a).max((1.0 + hp.clip) * a))
            .sum::<f64>() / n as f64;
        prop_assert!(obj.surrogate <= bound + 1e-12);
        prop_assert!(obj.value.is_finite());
    }
}
