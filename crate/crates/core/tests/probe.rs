// Temporary measurement harness; removed before release.

use meanfield::certify::deviation_metric;
use meanfield::ctmc::{generator_from_rates, spectral_check, Distribution};
use meanfield::openloop::synthesize_invariant_rates;
use meanfield::simulate::{integrate_ode, simulate_agents, Trajectory};
use meanfield::{DirectedGraph, FeedbackLaw};

fn chain5() -> DirectedGraph {
    DirectedGraph::bidirected_chain(5).unwrap()
}

fn paper_target() -> Distribution {
    Distribution::new(vec![0.1, 0.2, 0.25, 0.4, 0.05]).unwrap()
}

fn paper_initial() -> Distribution {
    Distribution::new(vec![0.4, 0.1, 0.05, 0.35, 0.1]).unwrap()
}

#[test]
#[ignore]
fn probe_spectral_gap_and_slope() {
    let g = chain5();
    let xd = paper_target();
    let rates = synthesize_invariant_rates(&g, &xd).unwrap();
    let gen = generator_from_rates(&g, &rates);
    let report = spectral_check(&gen);
    println!("gap report: {:?}", report);
    println!("rates: {:?}", rates.rates());
    // one trajectory from uniform, fit slope on L1 in [1e-7, 1e-4]
    let x0 = Distribution::uniform(5);
    let traj = integrate_ode(|x| gen.apply_transpose(x), &x0, 120.0, 1e-3).unwrap();
    let mut pts = Vec::new();
    for (t, s) in traj.times().iter().zip(traj.states()) {
        let d = s.l1_distance(&xd);
        if d > 1e-7 && d < 1e-4 {
            pts.push((*t, d.ln()));
        }
    }
    println!("fit points: {}", pts.len());
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|(t, v)| (t - mt) * (v - mv)).sum();
    let var: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    let slope = cov / var;
    println!(
        "slope {} vs gap {} rel err {}",
        slope,
        report.max_nonzero_real_part.unwrap(),
        (slope - report.max_nonzero_real_part.unwrap()).abs()
            / report.max_nonzero_real_part.unwrap().abs()
    );
    let final_d = traj.final_state().l1_distance(&xd);
    println!("final L1 at t=120: {:e}", final_d);
}

fn cascade(law: &FeedbackLaw, x0: &Distribution, target_l1: f64) -> (f64, Distribution, usize) {
    let mut state = x0.clone();
    let mut t = 0.0;
    let mut dt = 1e-3;
    let mut span = 10.0;
    let mut steps = 0;
    for _ in 0..8 {
        let traj = integrate_ode(law.field_fn(), &state, span, dt).unwrap();
        steps += traj.len();
        for (tt, s) in traj.times().iter().zip(traj.states()) {
            if s.l1_distance(law.target()) <= target_l1 {
                return (t + tt, s.clone(), steps);
            }
        }
        t += traj.final_time();
        state = traj.final_state().clone();
        println!("  t={:.3e} L1={:.3e}", t, state.l1_distance(law.target()));
        dt *= 10.0;
        span *= 10.0;
    }
    (t, state, steps)
}

#[test]
#[ignore]
fn probe_feedback_tail() {
    let g = chain5();
    let law = FeedbackLaw::new(g, paper_target(), 10.0).unwrap();
    let start = std::time::Instant::now();
    let (t, state, steps) = cascade(&law, &paper_initial(), 1e-4);
    println!(
        "reached L1 1e-4 at t = {:.4e} after {} steps in {:?}; final L1 {:.3e}",
        t,
        steps,
        start.elapsed(),
        state.l1_distance(law.target())
    );
    // convergence time to L1 = 0.01 for the horizon definition
    let traj = integrate_ode(law.field_fn(), &paper_initial(), 40.0, 1e-3).unwrap();
    let mut t001 = None;
    for (tt, s) in traj.times().iter().zip(traj.states()) {
        if s.l1_distance(law.target()) <= 0.01 {
            t001 = Some(*tt);
            break;
        }
    }
    println!("time to L1 0.01: {:?}", t001);
    let mut t005 = None;
    for (tt, s) in traj.times().iter().zip(traj.states()) {
        if s.l1_distance(law.target()) <= 0.05 {
            t005 = Some(*tt);
            break;
        }
    }
    println!("time to L1 0.05: {:?}", t005);
}

#[test]
#[ignore]
fn probe_agents() {
    let g = chain5();
    let law = FeedbackLaw::new(g.clone(), paper_target(), 10.0).unwrap();
    let horizon = 40.0;
    let ode: Trajectory =
        integrate_ode(law.field_fn(), &paper_initial(), horizon, 1e-3).unwrap();
    for &n in &[100u64, 1000u64] {
        let counts: Vec<u64> = paper_initial()
            .densities()
            .iter()
            .map(|p| (p * n as f64).round() as u64)
            .collect();
        for seed in 0..10u64 {
            let start = std::time::Instant::now();
            let traj =
                simulate_agents(&g, |x| law.feedback_rates(x), &counts, horizon, seed).unwrap();
            let dev = deviation_metric(&ode, &traj).unwrap();
            println!(
                "N={} seed={} events={} last_event={:?} deviation={:.4} ({:?})",
                n,
                seed,
                traj.event_count(),
                traj.last_transition_time(),
                dev,
                start.elapsed()
            );
        }
    }
}

#[test]
#[ignore]
fn probe_absorption() {
    let g = chain5();
    let law = FeedbackLaw::new(g.clone(), paper_target(), 10.0).unwrap();
    let horizon = 2.0e4;
    for &n in &[100u64, 1000u64] {
        let counts: Vec<u64> = paper_initial()
            .densities()
            .iter()
            .map(|p| (p * n as f64).round() as u64)
            .collect();
        for seed in 0..10u64 {
            let start = std::time::Instant::now();
            let traj =
                simulate_agents(&g, |x| law.feedback_rates(x), &counts, horizon, seed).unwrap();
            let total = traj.event_count();
            let late10 = traj.event_times().iter().filter(|&&t| t > 0.9 * horizon).count();
            let late20 = traj.event_times().iter().filter(|&&t| t > 0.8 * horizon).count();
            println!(
                "N={} seed={} events={} last={:.1?} late10%={} late20%={} ({:?})",
                n,
                seed,
                total,
                traj.last_transition_time(),
                late10,
                late20,
                start.elapsed()
            );
        }
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_strongly_connected(m: usize, rng: &mut ChaCha8Rng) -> DirectedGraph {
    // Hamiltonian cycle through a random permutation plus random extras.
    let mut perm: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let mut edges = Vec::new();
    for k in 0..m {
        edges.push((perm[k], perm[(k + 1) % m]));
    }
    for s in 0..m {
        for t in 0..m {
            if s != t && !edges.contains(&(s, t)) && rng.gen::<f64>() < 0.3 {
                edges.push((s, t));
            }
        }
    }
    DirectedGraph::new(m, edges).unwrap()
}

fn random_positive_target(m: usize, rng: &mut ChaCha8Rng) -> Distribution {
    let mut v: Vec<f64> = (0..m).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let sum: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x = 0.85 * (*x / sum) + 0.15 / m as f64;
    }
    Distribution::new(v).unwrap()
}

#[test]
#[ignore]
fn probe_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_rel = 0.0f64;
    let mut worst_resid = 0.0f64;
    let start = std::time::Instant::now();
    for case in 0..50 {
        let m = 2 + (case % 7);
        let g = random_strongly_connected(m, &mut rng);
        let xd = random_positive_target(m, &mut rng);
        let rates = synthesize_invariant_rates(&g, &xd).unwrap();
        let gen = generator_from_rates(&g, &rates);
        let resid = gen
            .apply_transpose(xd.densities())
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        worst_resid = worst_resid.max(resid);
        let report = spectral_check(&gen);
        assert_eq!(report.zero_multiplicity, 1, "case {}", case);
        let gap = report.max_nonzero_real_part.unwrap();
        assert!(gap < 0.0, "case {}", case);
        // one random initial, integrate until deep decay, fit slope
        let x0 = random_positive_target(m, &mut rng);
        let mut pts = Vec::new();
        let mut state = x0.clone();
        let mut t0 = 0.0;
        let mut reached = f64::INFINITY;
        for _ in 0..40 {
            let traj = integrate_ode(|x| gen.apply_transpose(x), &state, 10.0, 1e-3).unwrap();
            for (t, s) in traj.times().iter().zip(traj.states()) {
                let d = s.l1_distance(&xd);
                reached = reached.min(d);
                if d > 1e-7 && d < 1e-4 {
                    pts.push((t0 + t, d.ln()));
                }
            }
            state = traj.final_state().clone();
            t0 += traj.final_time();
            if state.l1_distance(&xd) < 1e-8 {
                break;
            }
        }
        assert!(reached < 1e-6, "case {} only reached {}", case, reached);
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let cov: f64 = pts.iter().map(|(t, v)| (t - mt) * (v - mv)).sum();
        let var: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
        let slope = cov / var;
        let rel = (slope - gap).abs() / gap.abs();
        if rel > worst_rel {
            worst_rel = rel;
            println!(
                "case {} m={} gap {:.4} slope {:.4} rel {:.4e} pts {}",
                case, m, gap, slope, rel, pts.len()
            );
        }
    }
    println!("worst rel {:.4e}, worst resid {:.3e}, elapsed {:?}", worst_rel, worst_resid, start.elapsed());
}

#[test]
#[ignore]
fn probe_case4_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let m = 2 + (case % 7);
        let g = random_strongly_connected(m, &mut rng);
        let xd = random_positive_target(m, &mut rng);
        let x0 = random_positive_target(m, &mut rng);
        if case != 4 && case != 1 {
            continue;
        }
        let rates = synthesize_invariant_rates(&g, &xd).unwrap();
        let gen = generator_from_rates(&g, &rates);
        let eig = gen.matrix().clone().complex_eigenvalues();
        println!("case {} eigenvalues: {:?}", case, eig.iter().collect::<Vec<_>>());
        // per-decade slopes
        let mut state = x0.clone();
        let mut t0 = 0.0;
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for _ in 0..40 {
            let traj = integrate_ode(|x| gen.apply_transpose(x), &state, 10.0, 1e-3).unwrap();
            for (t, s) in traj.times().iter().zip(traj.states()) {
                let d = s.l1_distance(&xd);
                if d > 1e-13 {
                    pts.push((t0 + t, d));
                }
            }
            state = traj.final_state().clone();
            t0 += traj.final_time();
            if state.l1_distance(&xd) < 5e-13 {
                break;
            }
        }
        for k in 2..12 {
            let lo = 10f64.powi(-(k as i32) - 1);
            let hi = 10f64.powi(-(k as i32));
            let window: Vec<(f64, f64)> =
                pts.iter().filter(|(_, d)| *d > lo && *d < hi).map(|(t, d)| (*t, d.ln())).collect();
            if window.len() < 10 {
                continue;
            }
            let n = window.len() as f64;
            let mt = window.iter().map(|p| p.0).sum::<f64>() / n;
            let mv = window.iter().map(|p| p.1).sum::<f64>() / n;
            let cov: f64 = window.iter().map(|(t, v)| (t - mt) * (v - mv)).sum();
            let var: f64 = window.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
            println!("  decade 1e-{}: slope {:.5}", k + 1, cov / var);
        }
    }
}

/// Decay-rate fit: regression on local maxima of log d(t) when the decay
/// oscillates (complex dominant pair), raw regression otherwise.
fn fit_rate(pts: &[(f64, f64)]) -> f64 {
    // pts: (t, d) with d already window-filtered, in time order
    let logs: Vec<(f64, f64)> = pts.iter().map(|(t, d)| (*t, d.ln())).collect();
    let mut peaks = Vec::new();
    for i in 1..pts.len().saturating_sub(1) {
        if pts[i].1 > pts[i - 1].1 && pts[i].1 > pts[i + 1].1 {
            peaks.push(logs[i]);
        }
    }
    let data = if peaks.len() >= 2 { &peaks } else { &logs };
    let n = data.len() as f64;
    let mt = data.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = data.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = data.iter().map(|(t, v)| (t - mt) * (v - mv)).sum();
    let var: f64 = data.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    cov / var
}

#[test]
#[ignore]
fn probe_random_graphs_peak_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_rel = 0.0f64;
    let start = std::time::Instant::now();
    for case in 0..50 {
        let m = 2 + (case % 7);
        let g = random_strongly_connected(m, &mut rng);
        let xd = random_positive_target(m, &mut rng);
        let x0 = random_positive_target(m, &mut rng);
        let rates = synthesize_invariant_rates(&g, &xd).unwrap();
        let gen = generator_from_rates(&g, &rates);
        let report = spectral_check(&gen);
        let gap = report.max_nonzero_real_part.unwrap();
        let mut pts = Vec::new();
        let mut state = x0.clone();
        let mut t0 = 0.0;
        for _ in 0..60 {
            let traj = integrate_ode(|x| gen.apply_transpose(x), &state, 10.0, 1e-3).unwrap();
            for (t, s) in traj.times().iter().zip(traj.states()) {
                let d = s.l1_distance(&xd);
                if d > 1e-10 && d < 1e-4 {
                    pts.push((t0 + t, d));
                }
            }
            state = traj.final_state().clone();
            t0 += traj.final_time();
            if state.l1_distance(&xd) < 1e-11 {
                break;
            }
        }
        let slope = fit_rate(&pts);
        let rel = (slope - gap).abs() / gap.abs();
        if rel > worst_rel {
            worst_rel = rel;
            println!("case {} m={} gap {:.4} slope {:.4} rel {:.3e}", case, m, gap, slope, rel);
        }
    }
    println!("worst rel {:.3e} elapsed {:?}", worst_rel, start.elapsed());
}

fn fit_rate_phase(pts: &[(f64, f64)], gap_im: f64) -> f64 {
    // pts in time order, d filtered to (1e-10, 1e-4)
    if gap_im.abs() > 1e-9 {
        let period = std::f64::consts::PI / gap_im.abs();
        let (t_end, d_end) = *pts.last().unwrap();
        let mut anchors = vec![(t_end, d_end.ln())];
        let mut k = 1.0;
        loop {
            let t_want = t_end - k * period;
            if t_want < pts[0].0 {
                break;
            }
            // nearest sample
            let idx = pts.partition_point(|p| p.0 < t_want);
            let best = if idx == 0 {
                0
            } else if idx >= pts.len() {
                pts.len() - 1
            } else if (pts[idx].0 - t_want).abs() < (pts[idx - 1].0 - t_want).abs() {
                idx
            } else {
                idx - 1
            };
            anchors.push((pts[best].0, pts[best].1.ln()));
            if anchors.len() >= 5 {
                break;
            }
            k += 1.0;
        }
        if anchors.len() >= 2 {
            let n = anchors.len() as f64;
            let mt = anchors.iter().map(|p| p.0).sum::<f64>() / n;
            let mv = anchors.iter().map(|p| p.1).sum::<f64>() / n;
            let cov: f64 = anchors.iter().map(|(t, v)| (t - mt) * (v - mv)).sum();
            let var: f64 = anchors.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
            return cov / var;
        }
    }
    // real dominant mode: raw regression over the deepest three decades
    let d_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let data: Vec<(f64, f64)> = pts
        .iter()
        .filter(|(_, d)| *d < d_min * 1e3)
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    let n = data.len() as f64;
    let mt = data.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = data.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = data.iter().map(|(t, v)| (t - mt) * (v - mv)).sum();
    let var: f64 = data.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    cov / var
}

#[test]
#[ignore]
fn probe_random_graphs_phase_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_rel = 0.0f64;
    let start = std::time::Instant::now();
    for case in 0..50 {
        let m = 2 + (case % 7);
        let g = random_strongly_connected(m, &mut rng);
        let xd = random_positive_target(m, &mut rng);
        let x0 = random_positive_target(m, &mut rng);
        let rates = synthesize_invariant_rates(&g, &xd).unwrap();
        let gen = generator_from_rates(&g, &rates);
        let eig = gen.matrix().clone().complex_eigenvalues();
        let mut gap_re = f64::NEG_INFINITY;
        let mut gap_im = 0.0;
        for ev in eig.iter() {
            if ev.norm() > 1e-9 && ev.re > gap_re {
                gap_re = ev.re;
                gap_im = ev.im;
            }
        }
        let mut pts = Vec::new();
        let mut state = x0.clone();
        let mut t0 = 0.0;
        for _ in 0..60 {
            let traj = integrate_ode(|x| gen.apply_transpose(x), &state, 10.0, 1e-3).unwrap();
            for (t, s) in traj.times().iter().zip(traj.states()) {
                let d = s.l1_distance(&xd);
                if d > 1e-10 && d < 1e-4 {
                    pts.push((t0 + t, d));
                }
            }
            state = traj.final_state().clone();
            t0 += traj.final_time();
            if state.l1_distance(&xd) < 1e-11 {
                break;
            }
        }
        let slope = fit_rate_phase(&pts, gap_im);
        let rel = (slope - gap_re).abs() / gap_re.abs();
        if rel > worst_rel {
            worst_rel = rel;
            println!("case {} m={} gap {:.4}+{:.4}i slope {:.4} rel {:.3e}", case, m, gap_re, gap_im, slope, rel);
        }
    }
    println!("worst rel {:.3e} elapsed {:?}", worst_rel, start.elapsed());
}
