use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::camera::Pose;
use crate::gmm::{Gaussian3D, Mat3};

fn mix(components: Vec<Gaussian3D>) -> Mixture {
    Mixture::new(components, 1.0).unwrap()
}

fn on_axis(z: f64, log_weight: f64) -> Gaussian3D {
    Gaussian3D::isotropic(Vec3::new(0.0, 0.0, z), 1.0, log_weight)
}

fn z_ray() -> Ray {
    Ray::new(Vec3::zeros(), Vec3::z())
}

#[test]
fn single_component_reproduces_its_own_values() {
    let mut g = Gaussian3D::isotropic(Vec3::new(0.3, -0.1, 4.0), 0.5, 0.4);
    g.color_raw = Vec3::new(0.5, -1.0, 2.0);
    let m = mix(vec![g.clone()]);
    let ray = Ray::towards(Vec3::zeros(), Vec3::new(0.05, 0.0, 1.0));
    let t1 = crate::gmm::ray_intersection_t(&ray, &g);
    for cfg in [
        RenderConfig::with_mode(BlendMode::Weighted2),
        RenderConfig::with_mode(BlendMode::Weighted5),
        RenderConfig::with_mode(BlendMode::AlphaComposited),
    ] {
        let r = shade_ray(&ray, &m, &cfg);
        assert_eq!(r.t_final, t1);
        assert_eq!(r.color, g.color());
        assert_eq!(r.max_weight, 1.0);
    }
}

#[test]
fn far_rays_are_transparent() {
    let m = mix(vec![
        Gaussian3D::isotropic(Vec3::new(50.0, 0.0, 5.0), 0.1, 0.0),
        Gaussian3D::isotropic(Vec3::new(-40.0, 3.0, 5.0), 0.1, 0.0),
    ]);
    let cfg = RenderConfig::default();
    let r = shade_ray_weighted(&z_ray(), &m, &cfg).unwrap();
    assert_eq!(r.alpha, 0.0);
    assert!(r.is_background());
    assert_eq!(r.max_weight, 0.0);
    let r = shade_ray_composited(&z_ray(), &m);
    assert_eq!(r.alpha, 0.0);
    assert!(r.is_background());
}

#[test]
fn weighted2_two_component_depth() {
    let m = mix(vec![on_axis(5.0, 0.0), on_axis(6.0, 0.0)]);
    let r = shade_ray_weighted(&z_ray(), &m, &RenderConfig::default()).unwrap();
    // (5 + 6 e^{-3.14}) / (1 + e^{-3.14}), evaluated at 50 digits
    assert_abs_diff_eq!(r.t_final, 5.041_487_119_301_696, epsilon = 1e-10);
    assert_abs_diff_eq!(r.alpha, -(-2.0f64).exp_m1(), epsilon = 1e-15);
}

#[test]
fn weighted_mode_rejects_composited_config() {
    let m = mix(vec![on_axis(5.0, 0.0)]);
    assert!(shade_ray_weighted(&z_ray(), &m, &RenderConfig::with_mode(BlendMode::AlphaComposited)).is_err());
}

#[test]
fn composited_single_component() {
    let m = mix(vec![on_axis(5.0, 0.3)]);
    let r = shade_ray_composited(&z_ray(), &m);
    assert_eq!(r.t_final, 5.0);
    assert_eq!(r.alpha, -(-(0.3f64.exp())).exp_m1());
}

#[test]
fn composited_ln2_weights() {
    // δ = ln 2 at the peak of each component
    let lw = 2f64.ln().ln();
    let m = mix(vec![on_axis(6.0, lw), on_axis(5.0, lw)]);
    let cfg = RenderConfig::with_mode(BlendMode::AlphaComposited);
    let mut shader = Shader::new(&m, &cfg);
    let r = shader.shade(&z_ray());
    let total = r.alpha;
    let w: Vec<(usize, f64)> = shader.last_weights().map(|(i, w)| (i, w * total)).collect();
    assert_eq!(w[0].0, 1);
    assert_abs_diff_eq!(w[0].1, 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(w[1].1, 0.25, epsilon = 1e-15);
    assert_abs_diff_eq!(total, 0.75, epsilon = 1e-15);
}

#[test]
fn composited_matches_extended_precision_oracle() {
    let rows = |r: [[f64; 3]; 3]| Mat3::from_row_slice(&r.concat());
    let comps = vec![
        Gaussian3D::new(
            Vec3::new(0.1, -0.2, 4.0),
            rows([[2.0, 0.3, 0.0], [0.0, 1.5, -0.2], [0.1, 0.0, 2.5]]),
            -0.3,
            Vec3::zeros(),
        ),
        Gaussian3D::new(
            Vec3::new(-0.3, 0.1, 4.6),
            rows([[1.2, 0.0, 0.4], [0.2, 1.8, 0.0], [0.0, -0.3, 1.1]]),
            0.2,
            Vec3::zeros(),
        ),
        Gaussian3D::new(
            Vec3::new(0.2, 0.25, 5.3),
            rows([[3.0, 0.1, 0.0], [0.0, 2.0, 0.5], [0.2, 0.0, 1.0]]),
            0.5,
            Vec3::zeros(),
        ),
        Gaussian3D::new(
            Vec3::new(0.0, 0.0, 3.5),
            rows([[0.9, 0.0, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 0.9]]),
            -1.0,
            Vec3::zeros(),
        ),
        Gaussian3D::new(
            Vec3::new(-0.15, -0.1, 6.1),
            rows([[1.5, -0.4, 0.2], [0.3, 1.4, 0.0], [0.0, 0.2, 2.2]]),
            1.0,
            Vec3::zeros(),
        ),
    ];
    let ray = Ray::towards(Vec3::new(0.05, -0.02, 0.1), Vec3::new(0.03, 0.01, 1.0));
    let r = shade_ray_composited(&ray, &mix(comps));
    // 60-digit sort-and-accumulate reference
    assert_abs_diff_eq!(r.t_final, 4.029_741_089_863_375, epsilon = 1e-12);
    assert_abs_diff_eq!(r.alpha, 0.997_310_729_289_557_7, epsilon = 1e-12);
}

#[test]
fn occlusion_limit() {
    // near component with δ = e^{3} ≈ 20.1
    let m = mix(vec![on_axis(9.0, 1.0), on_axis(4.0, 3.0)]);
    let r = shade_ray_composited(&z_ray(), &m);
    assert!((r.t_final - 4.0).abs() < 1e-6);
}

#[test]
fn behind_camera_components_are_skipped() {
    let m = mix(vec![on_axis(-3.0, 2.0), on_axis(4.0, 0.0)]);
    for mode in [BlendMode::Weighted2, BlendMode::AlphaComposited] {
        let r = shade_ray(&z_ray(), &m, &RenderConfig::with_mode(mode));
        assert_eq!(r.t_final, 4.0);
        assert_eq!(r.alpha, -(-1.0f64).exp_m1());
    }
}

#[test]
fn normal_faces_camera_and_is_unit() {
    let m = mix(vec![
        Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 4.0), 0.4, 1.0),
        Gaussian3D::isotropic(Vec3::new(0.3, 0.1, 4.4), 0.3, 1.0),
    ]);
    let ray = Ray::towards(Vec3::zeros(), Vec3::new(0.06, 0.01, 1.0));
    for mode in [BlendMode::Weighted2, BlendMode::AlphaComposited] {
        let r = shade_ray(&ray, &m, &RenderConfig::with_mode(mode));
        assert_abs_diff_eq!(r.normal.norm(), 1.0, epsilon = 1e-9);
        assert!(r.normal.dot(&ray.direction) <= 0.0);
    }
}

fn test_camera(w: usize, h: usize) -> Camera {
    Camera::new(Pose::identity(), 0.02, w, h).unwrap()
}

#[test]
fn off_frame_mixture_renders_empty() {
    let m = mix(vec![Gaussian3D::isotropic(Vec3::new(0.0, 0.0, -5.0), 0.2, 0.0)]);
    let maps = render_maps(&test_camera(16, 12), &m, &RenderConfig::default());
    assert!(maps.alpha.iter().all(|&a| a < 1e-12));
    assert!(maps.depth.iter().all(|d| d.is_infinite()));
}

#[test]
fn centered_component_renders_symmetric_alpha() {
    let m = mix(vec![Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 3.0), 0.3, 1.0)]);
    let (w, h) = (32, 24);
    let maps = render_maps(&test_camera(w, h), &m, &RenderConfig::default());
    let mut worst = 0.0f64;
    for row in 0..h {
        for col in 0..w {
            let a = maps.alpha[row * w + col];
            let mirrored = [maps.alpha[row * w + (w - 1 - col)], maps.alpha[(h - 1 - row) * w + col]];
            for b in mirrored {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-6, "asymmetry {worst}");
    assert!(maps.alpha[(h / 2) * w + w / 2] > 0.5);
}

#[test]
fn render_is_deterministic() {
    let m = mix(vec![
        Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 3.0), 0.3, 1.0),
        Gaussian3D::isotropic(Vec3::new(0.2, 0.1, 3.2), 0.2, 0.5),
        Gaussian3D::isotropic(Vec3::new(-0.2, 0.1, 2.8), 0.25, 0.0),
    ]);
    for mode in [BlendMode::Weighted2, BlendMode::AlphaComposited] {
        let cfg = RenderConfig::with_mode(mode);
        let cam = test_camera(64, 64);
        let a = render_maps(&cam, &m, &cfg);
        let b = render_maps(&cam, &m, &cfg);
        let bits = |m: &RenderMaps| -> Vec<u64> {
            m.depth
                .iter()
                .chain(&m.alpha)
                .chain(&m.max_weight)
                .map(|x| x.to_bits())
                .chain(
                    m.normal
                        .iter()
                        .chain(&m.color)
                        .flat_map(|v| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()),
                )
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn identical_pose_gives_zero_flow() {
    let m = mix(vec![Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 3.0), 0.3, 1.0)]);
    let cam = test_camera(24, 24);
    let flow = render_flow(&cam, None, Some(&cam), &m, &RenderConfig::default()).unwrap();
    assert!(flow.backward.is_none());
    let fwd = flow.forward.unwrap();
    let mut valid = 0;
    for f in &fwd.data {
        if FlowField::is_valid(*f) {
            valid += 1;
            assert!(f[0].abs() < 1e-4 && f[1].abs() < 1e-4, "{f:?}");
        }
    }
    assert!(valid > 0);
}

#[test]
fn lateral_translation_flow_matches_two_view_geometry() {
    // wide, thin slab facing the camera approximates a fronto-parallel plane
    let slab = Gaussian3D::new(
        Vec3::new(0.0, 0.0, 4.0),
        Mat3::from_diagonal(&Vec3::new(0.2, 0.2, 10.0)),
        2.0,
        Vec3::zeros(),
    );
    let m = mix(vec![slab]);
    let cam = test_camera(20, 16);
    let baseline = 0.1;
    let mut moved = cam;
    moved.pose.translation = Vec3::new(baseline, 0.0, 0.0);
    let cfg = RenderConfig::default();
    let flow = render_flow(&cam, None, Some(&moved), &m, &cfg)
        .unwrap()
        .forward
        .unwrap();
    let maps = render_maps(&cam, &m, &cfg);
    let mut checked = 0;
    for row in 0..cam.height {
        for col in 0..cam.width {
            let f = flow.get(col, row);
            if !FlowField::is_valid(f) {
                continue;
            }
            let ray = cam.pixel_ray(col, row);
            let z = ray.at(maps.depth[row * cam.width + col]).z;
            // closed form for a sideways baseline B: Δu = −B / (z · invFocal), Δv = 0
            let expected = -baseline / (z * cam.inv_focal);
            assert!(f[0] < 0.0);
            assert!(
                (f[0] as f64 - expected).abs() < 1e-4 * expected.abs(),
                "{} vs {expected}",
                f[0]
            );
            assert!(f[1].abs() < 1e-4);
            checked += 1;
        }
    }
    assert_eq!(checked, cam.pixel_count());
}

#[test]
fn point_behind_adjacent_camera_is_invalid() {
    let m = mix(vec![Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 3.0), 0.3, 1.0)]);
    let cam = test_camera(8, 8);
    let mut beyond = cam;
    beyond.pose.translation = Vec3::new(0.0, 0.0, 10.0);
    let flow = render_flow(&cam, Some(&beyond), None, &m, &RenderConfig::default()).unwrap();
    let bwd = flow.backward.unwrap();
    assert!(bwd.data.iter().all(|f| !FlowField::is_valid(*f)));
}

#[test]
fn flow_needs_an_adjacent_camera() {
    let m = mix(vec![on_axis(3.0, 0.0)]);
    assert!(render_flow(&test_camera(4, 4), None, None, &m, &RenderConfig::default()).is_err());
}

fn arb_component() -> impl Strategy<Value = Gaussian3D> {
    (
        prop::array::uniform3(-0.5f64..0.5),
        2.5f64..5.0,
        prop::array::uniform9(-0.5f64..0.5),
        -1.0f64..1.5,
        prop::array::uniform3(-2.0f64..2.0),
    )
        .prop_map(|(xy, z, u, lw, c)| {
            let root = Mat3::from_row_slice(&u) + Mat3::identity() * 2.5;
            Gaussian3D::new(Vec3::new(xy[0], xy[1], z), root, lw, Vec3::from(c))
        })
}

fn arb_ray() -> impl Strategy<Value = Ray> {
    prop::array::uniform2(-0.15f64..0.15).prop_map(|d| Ray::towards(Vec3::zeros(), Vec3::new(d[0], d[1], 1.0)))
}

const MODES: [BlendMode; 3] = [BlendMode::Weighted5, BlendMode::Weighted2, BlendMode::AlphaComposited];

proptest! {
    #[test]
    fn single_component_modes_agree(g in arb_component(), ray in arb_ray()) {
        let m = mix(vec![g]);
        let w = shade_ray(&ray, &m, &RenderConfig::with_mode(BlendMode::Weighted2));
        let c = shade_ray(&ray, &m, &RenderConfig::with_mode(BlendMode::AlphaComposited));
        prop_assert!((w.t_final - c.t_final).abs() <= 1e-12);
        prop_assert!((w.normal - c.normal).norm() <= 1e-12);
        prop_assert!((w.color - c.color).norm() <= 1e-12);
        prop_assert_eq!(w.alpha, c.alpha);
    }

    #[test]
    fn depth_is_convex_combination(comps in prop::collection::vec(arb_component(), 1..8), ray in arb_ray()) {
        let m = mix(comps);
        for mode in MODES {
            let cfg = RenderConfig::with_mode(mode);
            let mut shader = Shader::new(&m, &cfg);
            let r = shader.shade(&ray);
            if r.is_background() { continue; }
            let ts: Vec<f64> = shader.last_intersections().map(|(_, t, _)| t).collect();
            let lo = ts.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.t_final >= lo - 1e-12 && r.t_final <= hi + 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.alpha));
        }
    }

    #[test]
    fn composited_weights_bounded(comps in prop::collection::vec(arb_component(), 1..8), ray in arb_ray()) {
        let m = mix(comps);
        let cfg = RenderConfig::with_mode(BlendMode::AlphaComposited);
        let mut shader = Shader::new(&m, &cfg);
        let r = shader.shade(&ray);
        let raw: Vec<f64> = shader.last_weights().map(|(_, w)| w * r.alpha).collect();
        prop_assert!(raw.iter().all(|&w| w >= 0.0));
        prop_assert!(raw.iter().sum::<f64>() <= 1.0 + 1e-15);
    }

    #[test]
    fn order_invariance(comps in prop::collection::vec(arb_component(), 2..7), ray in arb_ray(), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = comps.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (mix(comps), mix(shuffled));
        for mode in MODES {
            let cfg = RenderConfig::with_mode(mode);
            let ra = shade_ray(&ray, &a, &cfg);
            let rb = shade_ray(&ray, &b, &cfg);
            let tol = 1e-12 * (1.0 + ra.t_final.abs());
            if ra.is_background() {
                prop_assert!(rb.is_background());
            } else {
                prop_assert!((ra.t_final - rb.t_final).abs() <= tol);
                prop_assert!((ra.color - rb.color).norm() <= 1e-12);
                // the camera-facing flip is ambiguous for normals perpendicular to the ray
                if ra.normal.dot(&ray.direction).abs() > 1e-6 {
                    prop_assert!((ra.normal - rb.normal).norm() <= 1e-9);
                }
                prop_assert!((ra.max_weight - rb.max_weight).abs() <= 1e-12);
            }
            prop_assert!((ra.alpha - rb.alpha).abs() <= 1e-12);
        }
    }
}
