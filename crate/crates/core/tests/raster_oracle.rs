//! Rasterization against an independent per-pixel, all-triangles scan.

use motionfit::mesh::{Camera, FeatureMap, Mesh};
use motionfit::raster::{rasterize_features, render_depth_mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct OracleImage {
    values: Vec<f64>,
    mask: Vec<bool>,
    depth: Vec<f64>,
}

fn e(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

// pixel center inside a counter-clockwise-normalized triangle, with ties on
// an edge resolved towards top and left edges
fn covers(t: [(f64, f64); 3], area: f64, p: (f64, f64)) -> Option<[f64; 3]> {
    let s = area.signum();
    let edges = [(t[1], t[2]), (t[2], t[0]), (t[0], t[1])];
    let mut w = [0.0; 3];
    for (k, &(a, b)) in edges.iter().enumerate() {
        let raw = e(a, b, p);
        let v = s * raw;
        if v < 0.0 {
            return None;
        }
        if v == 0.0 {
            let (dx, dy) = (s * (b.0 - a.0), s * (b.1 - a.1));
            let top_left = dy < 0.0 || (dy == 0.0 && dx > 0.0);
            if !top_left {
                return None;
            }
        }
        w[k] = raw / area;
    }
    Some(w)
}

fn oracle(mesh: &Mesh, cam: &Camera, feats: &[f64], bg: &FeatureMap) -> OracleImage {
    let (w, h, d) = (bg.width, bg.height, bg.channels);
    let proj: Vec<(f64, f64, f64)> = mesh
        .vertices()
        .iter()
        .map(|&v| {
            let c = cam.to_camera_space(v);
            let (x, y) = cam.project_camera_space(c);
            (x, y, c[2])
        })
        .collect();
    let mut out = OracleImage { values: bg.data.clone(), mask: vec![false; w * h], depth: vec![f64::INFINITY; w * h] };
    for i in 0..h {
        for j in 0..w {
            let p = (j as f64, i as f64);
            let mut best: Option<(f64, usize, [f64; 3])> = None;
            for (fi, f) in mesh.faces().iter().enumerate() {
                let v = [proj[f[0]], proj[f[1]], proj[f[2]]];
                if v.iter().any(|q| q.2 <= 1e-6) {
                    continue;
                }
                let t = [(v[0].0, v[0].1), (v[1].0, v[1].1), (v[2].0, v[2].1)];
                let area = e(t[0], t[1], t[2]);
                if area == 0.0 || !area.is_finite() {
                    continue;
                }
                if let Some(bw) = covers(t, area, p) {
                    let z = bw[0] * v[0].2 + bw[1] * v[1].2 + bw[2] * v[2].2;
                    // strict comparison keeps the first (lowest-index) face on ties
                    if best.is_none_or(|b| z < b.0) {
                        best = Some((z, fi, bw));
                    }
                }
            }
            if let Some((z, fi, bw)) = best {
                let px = i * w + j;
                out.mask[px] = true;
                out.depth[px] = z;
                let f = mesh.faces()[fi];
                for c in 0..d {
                    let a = feats[f[0] * d + c];
                    out.values[px * d + c] = a + bw[1] * (feats[f[1] * d + c] - a) + bw[2] * (feats[f[2] * d + c] - a);
                }
            }
        }
    }
    out
}

fn random_scene(rng: &mut ChaCha8Rng) -> (Mesh, Camera, Vec<f64>, FeatureMap) {
    let n_faces = rng.random_range(1..=50);
    let n_verts = rng.random_range(3..=60);
    let verts: Vec<[f64; 3]> = (0..n_verts)
        .map(|_| [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0)])
        .collect();
    let faces: Vec<[usize; 3]> = (0..n_faces)
        .map(|_| loop {
            let f = [rng.random_range(0..n_verts), rng.random_range(0..n_verts), rng.random_range(0..n_verts)];
            if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
                break f;
            }
        })
        .collect();
    let mut mesh = Mesh::new(verts, faces).unwrap();
    // occasionally snap to a coarse grid so exact ties and on-edge centers occur
    if rng.random_bool(0.3) {
        let snapped = mesh.vertices().iter().map(|v| [(v[0] * 4.0).round() / 4.0, (v[1] * 4.0).round() / 4.0, (v[2] * 2.0).round() / 2.0]).collect();
        mesh = mesh.with_vertices(snapped);
    }
    let w = rng.random_range(1..=64);
    let h = rng.random_range(1..=64);
    let f = rng.random_range(5.0..40.0);
    let cam = Camera::at_center(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, [0.0, 0.0, -4.0], w, h).unwrap();
    let d = rng.random_range(1..=4);
    let feats = (0..n_verts * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bg = FeatureMap::new(h, w, d, (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect());
    (mesh, cam, feats, bg)
}

#[test]
fn matches_brute_force_scan_on_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut covered_total = 0;
    for scene in 0..200 {
        let (mesh, cam, feats, bg) = random_scene(&mut rng);
        let want = oracle(&mesh, &cam, &feats, &bg);
        let got = rasterize_features(&mesh, &cam, &feats, &bg).unwrap();
        assert_eq!(got.mask, want.mask, "scene {scene} mask");
        assert_eq!(got.features.data, want.values, "scene {scene} values");
        let dm = render_depth_mask(&mesh, &cam);
        assert_eq!(dm.mask, want.mask, "scene {scene} depth mask");
        assert_eq!(dm.depth, want.depth, "scene {scene} depth");
        covered_total += want.mask.iter().filter(|&&m| m).count();
    }
    assert!(covered_total > 10_000);
}

#[test]
fn cube_coverage_count() {
    let v: Vec<[f64; 3]> = (0..8).map(|i| [(i & 1) as f64 - 0.5, ((i >> 1) & 1) as f64 - 0.5, ((i >> 2) & 1) as f64 - 0.5]).collect();
    let faces = vec![
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
        [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ];
    let mesh = Mesh::new(v, faces).unwrap();
    let cam = Camera::at_center(120.0, 120.0, 31.5, 31.5, [0.3, 0.2, -4.0], 64, 64).unwrap();
    let bg = FeatureMap::zeros(64, 64, 1);
    let want = oracle(&mesh, &cam, &vec![0.0; 8], &bg);
    let dm = render_depth_mask(&mesh, &cam);
    assert_eq!(dm.covered_count(), want.mask.iter().filter(|&&m| m).count());
    assert!(dm.covered_count() > 100);
}
