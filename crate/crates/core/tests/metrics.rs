use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shearwave::data::{ElasticityMap, ScanGeometry};
use shearwave::metrics::*;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn random_map(rng: &mut ChaCha8Rng, dim: (usize, usize), lo: f64, hi: f64, invalid_rate: f64) -> ElasticityMap {
    let values = Array2::from_shape_simple_fn(dim, || rng.gen_range(lo..hi));
    let valid = Array2::from_shape_simple_fn(dim, || rng.gen::<f64>() >= invalid_rate);
    ElasticityMap::new(values, valid).unwrap()
}

struct Scene {
    geom: ScanGeometry,
    center: f64,
    exclusion: Array2<bool>,
}

fn scene(rng: &mut ChaCha8Rng) -> Scene {
    let geom = ScanGeometry::with_dims(2, rng.gen_range(20..60), rng.gen_range(100..400));
    let exclusion = Array2::from_shape_fn(geom.frame_dims(), |(l, _)| {
        geom.lateral_offset(l).abs() <= 1.5e-3
    });
    Scene {
        geom,
        center: 0.0125,
        exclusion,
    }
}

fn random_disk(rng: &mut ChaCha8Rng, s: &Scene, role: RoiRole) -> Roi {
    let depth = s.geom.depth(s.geom.n_axial - 1);
    Roi {
        shape: RoiShape::Disk {
            center_axial: rng.gen_range(0.0..depth),
            center_lateral: s.center + rng.gen_range(-4e-3..4e-3),
            radius: rng.gen_range(1e-3..3e-3),
        },
        role,
    }
}

/// Pixel loop with the region test written out from the disk definition.
fn oracle_pixels(map: &ElasticityMap, truth: Option<&ElasticityMap>, roi: &Roi, s: &Scene) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for l in 0..s.geom.n_lateral {
        for k in 0..s.geom.n_axial {
            let inside = match roi.shape {
                RoiShape::Disk {
                    center_axial,
                    center_lateral,
                    radius,
                } => {
                    let z = k as f64 * s.geom.sound_speed / (2.0 * s.geom.sampling_freq);
                    let x = s.center + (l as f64 - s.geom.push_lateral_index as f64) * s.geom.lateral_pitch;
                    (z - center_axial).powi(2) + (x - center_lateral).powi(2) <= radius * radius
                }
                _ => true,
            };
            let truth_ok = truth.map_or(true, |t| t.valid[[l, k]]);
            if inside && map.valid[[l, k]] && truth_ok && !s.exclusion[[l, k]] {
                out.push((map.values[[l, k]], truth.map_or(0.0, |t| t.values[[l, k]])));
            }
        }
    }
    out
}

fn oracle_stats(px: &[(f64, f64)]) -> (f64, f64) {
    let n = px.len() as f64;
    let mut mean = 0.0;
    for p in px {
        mean += p.0;
    }
    mean /= n;
    let mut var = 0.0;
    for p in px {
        var += (p.0 - mean) * (p.0 - mean);
    }
    (mean, (var / n).sqrt())
}

#[test]
fn metrics_match_pixel_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for _ in 0..60 {
        let s = scene(&mut rng);
        let pred = random_map(&mut rng, s.geom.frame_dims(), 5e3, 90e3, 0.3);
        let truth = random_map(&mut rng, s.geom.frame_dims(), 15e3, 60e3, 0.1);
        let bg = random_disk(&mut rng, &s, RoiRole::Background);
        let inc = random_disk(&mut rng, &s, RoiRole::Inclusion);
        let bg_px = oracle_pixels(&pred, None, &bg, &s);
        let inc_px = oracle_pixels(&pred, None, &inc, &s);
        if bg_px.len() < 2 || inc_px.len() < 2 {
            assert!(bg_px.is_empty() == roi_stats(&pred, &bg.mask(&s.geom, s.center), &s.exclusion).is_err());
            continue;
        }
        checked += 1;
        let b = roi_stats(&pred, &bg.mask(&s.geom, s.center), &s.exclusion).unwrap();
        let i = roi_stats(&pred, &inc.mask(&s.geom, s.center), &s.exclusion).unwrap();
        let (mb, sb) = oracle_stats(&bg_px);
        let (mi, si) = oracle_stats(&inc_px);
        assert_eq!(b.count, bg_px.len());
        assert!(rel(snr(&b).unwrap(), mb / sb) <= 1e-12);
        let want = (2.0 * (mb - mi) * (mb - mi) / (sb * sb + si * si)).sqrt();
        assert!(rel(cnr(&b, &i).unwrap(), want) <= 1e-12);

        let mae_px = oracle_pixels(&pred, Some(&truth), &inc, &s);
        if !mae_px.is_empty() {
            let want = mae_px.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / mae_px.len() as f64;
            let (got, n) = mae(&pred, &truth, &inc.mask(&s.geom, s.center), &s.exclusion).unwrap();
            assert_eq!(n, mae_px.len());
            assert!(rel(got, want) <= 1e-12);
        }
    }
    assert!(checked >= 30, "only {checked} scenes had populated regions");
}

#[test]
fn region_inside_exclusion_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = scene(&mut rng);
    let map = random_map(&mut rng, s.geom.frame_dims(), 1e3, 2e3, 0.0);
    let roi = Roi {
        shape: RoiShape::Rect {
            axial: (0.0, 1.0),
            lateral: (s.center - 1e-3, s.center + 1e-3),
        },
        role: RoiRole::Inclusion,
    };
    assert!(roi_stats(&map, &roi.mask(&s.geom, s.center), &s.exclusion).is_err());
}

#[test]
fn evaluation_of_truth_against_itself() {
    let geom = ScanGeometry::with_dims(2, 40, 300);
    let values = Array2::from_shape_fn(geom.frame_dims(), |(l, k)| 20e3 + 10.0 * (l * 7 + k % 13) as f64);
    let truth = ElasticityMap::fully_valid(values).unwrap();
    let exclusion = Array2::from_elem(geom.frame_dims(), false);
    let e = evaluate(&truth, &truth, None, &geom, 0.0125, &exclusion).unwrap();
    assert_eq!(e.mae_background, 0.0);
    assert!(e.cnr.is_none() && e.mae_inclusion.is_none());
    assert_eq!(e.background_count, 40 * 300);
    let flat = ElasticityMap::fully_valid(Array2::from_elem(geom.frame_dims(), 20e3)).unwrap();
    assert!(evaluate(&flat, &truth, None, &geom, 0.0125, &exclusion).unwrap().snr.is_none());
}

fn values_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e3..1e5f64, 2..40)
}

fn stats_of(v: &[f64]) -> RoiStats {
    let map = ElasticityMap::fully_valid(Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()).unwrap();
    let n = v.len();
    roi_stats(&map, &Array2::from_elem((1, n), true), &Array2::from_elem((1, n), false)).unwrap()
}

proptest! {
    #[test]
    fn snr_is_scale_invariant(v in values_strategy(), a in 0.01..100.0f64) {
        let s = stats_of(&v);
        prop_assume!(s.std > 0.0);
        let scaled: Vec<f64> = v.iter().map(|x| a * x).collect();
        prop_assert!(rel(snr(&stats_of(&scaled)).unwrap(), snr(&s).unwrap()) <= 1e-12);
    }

    #[test]
    fn cnr_symmetric_and_shift_invariant(b in values_strategy(), i in values_strategy(), c in -500.0..500.0f64) {
        let (sb, si) = (stats_of(&b), stats_of(&i));
        prop_assume!(sb.std + si.std > 0.0);
        let x = cnr(&sb, &si).unwrap();
        prop_assert_eq!(x, cnr(&si, &sb).unwrap());
        let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let y = cnr(&stats_of(&shift(&b)), &stats_of(&shift(&i))).unwrap();
        prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0));
    }

    #[test]
    fn mae_triangle_inequality(a in values_strategy(), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = a.len();
        let to_map = |v: Vec<f64>| ElasticityMap::fully_valid(Array2::from_shape_vec((1, n), v).unwrap()).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(1e3..1e5)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(1e3..1e5)).collect();
        let (a, b, c) = (to_map(a), to_map(b), to_map(c));
        let region = Array2::from_elem((1, n), true);
        let excl = Array2::from_elem((1, n), false);
        let m = |x: &ElasticityMap, y: &ElasticityMap| mae(x, y, &region, &excl).unwrap().0;
        prop_assert!(m(&a, &c) <= m(&a, &b) + m(&b, &c) + 1e-9);
    }
}
