use mvdit_core::attention::{attention_entropy, biased_lambda, default_lambda, softmax_rows, AttentionBiasConfig, Scaling};
use mvdit_core::camera::{look_at_camera, plucker_grid, project_point, ray_for_pixel, CameraParams};
use mvdit_core::consistency::{dataset_re, oracle_correspondences, ReOptions};
use mvdit_core::schedule::{bump_cfg_scale, rescale_alpha, uncertainty_from_alpha, CfgMode, CfgPolicy};
use mvdit_core::Tensor;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn ring_camera(azimuth: f64, elevation: f64, radius: f64, size: usize) -> CameraParams {
    let eye = Vector3::new(radius * azimuth.sin() * elevation.cos(), radius * elevation.sin(), -radius * azimuth.cos() * elevation.cos());
    let f = 1.2 * size as f64;
    let c = size as f64 / 2.0;
    look_at_camera(eye, Vector3::zeros(), Vector3::y(), f, f, c, c, size, size).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rescaled_alpha_keeps_uncertainty(alpha in 1e-4f64..1.0, ratio in 0.05f64..64.0, n in 16.0f64..4096.0) {
        let m = ratio * n;
        let rescaled = rescale_alpha(alpha, ratio).unwrap();
        let before = uncertainty_from_alpha(alpha, n);
        let after = uncertainty_from_alpha(rescaled, m);
        prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
        let back = rescale_alpha(rescaled, 1.0 / ratio).unwrap();
        prop_assert!((back - alpha).abs() <= 1e-12);
    }

    #[test]
    fn lambda_grows_with_tokens_and_gamma(d in 1usize..512, nt in 2usize..4096, extra in 0usize..100_000, g in 1.0f64..2.0) {
        let ni = nt + extra;
        let base = AttentionBiasConfig::new(d, nt, 1.0).unwrap();
        let at_train = biased_lambda(&base, nt).unwrap();
        prop_assert_eq!(at_train, default_lambda(d));
        let grown = biased_lambda(&AttentionBiasConfig::new(d, nt, g).unwrap(), ni).unwrap();
        prop_assert!(grown >= at_train);
        let expect = (g * (ni as f64).ln() / (nt as f64).ln() / d as f64).sqrt();
        prop_assert!((grown - expect).abs() <= 1e-12 * expect);
        prop_assert_eq!(Scaling::Gamma(g).lambda(d, nt, ni).unwrap(), grown);
    }

    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-20.0f64..20.0, 12..48), lambda in 0.0f64..4.0) {
        let n = vals.len() / 4;
        let logits = Tensor::from_vec(4, n, vals[..4 * n].to_vec()).unwrap();
        let a = softmax_rows(&logits, lambda);
        for r in 0..4 {
            let s: f64 = a.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let e = attention_entropy(&a).unwrap();
        prop_assert!(e.min >= -1e-12 && e.max <= (n as f64).ln() + 1e-12);
    }

    #[test]
    fn plucker_rays_pass_through_their_pixels(az in 0.0f64..6.28, el in -1.0f64..1.0, r in 1.5f64..6.0, row in 0usize..16, col in 0usize..16, s in 0.5f64..10.0) {
        let cam = ring_camera(az, el, r, 16);
        let grid = plucker_grid(&cam, 16, 16);
        let d = grid.direction(row, col);
        let m = grid.moment(row, col);
        let c = cam.center();
        prop_assert!((d.norm() - 1.0).abs() < 1e-12);
        prop_assert!(d.dot(&m).abs() < 1e-10);
        prop_assert!((m - c.cross(&d)).norm() < 1e-10);
        // hand-rolled pinhole projection of a point along the ray
        let x = c + s * d;
        let xc = cam.rotation * x + cam.translation;
        let (u, v) = (cam.fx * xc.x / xc.z + cam.cx, cam.fy * xc.y / xc.z + cam.cy);
        prop_assert!((u - (col as f64 + 0.5)).abs() < 1e-8 && (v - (row as f64 + 0.5)).abs() < 1e-8);
        let (pu, pv) = project_point(&cam, &x).pixel().unwrap();
        prop_assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
        let ray = ray_for_pixel(&cam, u, v);
        prop_assert!((ray.direction - d).norm() < 1e-9);
    }

    #[test]
    fn bump_scale_is_symmetric_and_bounded(a in 0.0f64..360.0, base in 0.0f64..5.0, extra in 0.0f64..5.0) {
        let p = CfgPolicy::new(base, base + extra, CfgMode::Bump).unwrap();
        let s = bump_cfg_scale(a, &p);
        prop_assert!(s >= base - 1e-12 && s <= base + extra + 1e-12);
        prop_assert!((s - bump_cfg_scale(360.0 - a, &p)).abs() < 1e-9);
        prop_assert!((s - bump_cfg_scale(a + 720.0, &p)).abs() < 1e-9);
    }

    #[test]
    fn reprojection_error_under_world_motion(seed in 0u64..1000, scale in 0.2f64..5.0, ax in -1.0f64..1.0, ay in -1.0f64..1.0) {
        let size = 64;
        let cams: Vec<CameraParams> = (0..4).map(|i| ring_camera(1.3 * i as f64 + 0.2, 0.25, 3.0, size)).collect();
        let pts: Vec<Vector3<f64>> = (0..40)
            .map(|i| {
                let k = i as f64;
                Vector3::new(0.5 * (1.7 * k).sin(), 0.5 * (2.3 * k).cos(), 0.5 * (0.9 * k).sin())
            })
            .collect();
        let rot = Rotation3::from_euler_angles(ax, ay, 0.4 * ax);
        let shift = Vector3::new(0.3, -0.2, 0.7);
        let moved_cams: Vec<CameraParams> = cams
            .iter()
            .map(|c| {
                // x' = s R x + b  =>  R_c' = R_c Rᵀ, t_c' = s t_c - R_c' b
                let r = c.rotation * rot.matrix().transpose();
                let t = scale * c.translation - r * shift;
                CameraParams::new(c.fx, c.fy, c.cx, c.cy, r, t, c.width, c.height).unwrap()
            })
            .collect();
        let moved_pts: Vec<Vector3<f64>> = pts.iter().map(|p| scale * (rot * p) + shift).collect();
        let opts = ReOptions { seed, ..ReOptions::default() };
        let re = |cams: &[CameraParams], pts: &[Vector3<f64>], sigma: f64| {
            let sets: Vec<_> = (0..4)
                .flat_map(|a| ((a + 1)..4).map(move |b| (a, b)))
                .map(|(a, b)| oracle_correspondences(pts, (a, &cams[a]), (b, &cams[b]), sigma, seed ^ ((a as u64) << 8 | b as u64)).unwrap())
                .collect();
            dataset_re(&sets, cams, &opts).unwrap().mean_re
        };
        // algebraic DLT is only exact without noise once scale or translation change the frame
        prop_assert!(re(&moved_cams, &moved_pts, 0.0) < 1e-6);
        let a = re(&cams, &pts, 1.0);
        prop_assert!(a > 0.0);
        let rotated_cams: Vec<CameraParams> = cams
            .iter()
            .map(|c| {
                let r = c.rotation * rot.matrix().transpose();
                CameraParams::new(c.fx, c.fy, c.cx, c.cy, r, c.translation, c.width, c.height).unwrap()
            })
            .collect();
        let rotated_pts: Vec<Vector3<f64>> = pts.iter().map(|p| rot * p).collect();
        let c = re(&rotated_cams, &rotated_pts, 1.0);
        prop_assert!((a - c).abs() <= 1e-9 * a, "{} vs {}", a, c);
    }
}
