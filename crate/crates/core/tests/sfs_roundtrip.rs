use polypseg_core::raster::Field;
use polypseg_core::sfs::{
    lax_friedrichs_solve, render_lambertian, AlbedoSource, CameraModel, SfsConfig, SfsResult, SyntheticSurface,
};

const SIZE: usize = 64;
const MARGIN: usize = 4;

fn roundtrip(surface: SyntheticSurface, offset: [f64; 3]) -> (Field, SfsResult) {
    let cam = CameraModel::centered(SIZE, SIZE, SIZE as f64, offset).unwrap();
    let depth = surface.sample(SIZE, SIZE, &cam);
    let image = render_lambertian(&depth, &cam, 1.0).unwrap();
    let config = SfsConfig {
        albedo: AlbedoSource::Fixed { value: 1.0 },
        ..Default::default()
    };
    (depth, lax_friedrichs_solve(&image, &cam, &config).unwrap())
}

/// Interior RMSE and depth range.
fn interior_error(truth: &Field, result: &SfsResult) -> (f64, f64) {
    let got = result.log_depth.depth();
    let (mut se, mut n, mut lo, mut hi) = (0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for i in MARGIN..SIZE - MARGIN {
        for j in MARGIN..SIZE - MARGIN {
            let t = truth.get(i, j);
            se += (got.get(i, j) - t).powi(2);
            n += 1.0;
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    ((se / n).sqrt(), hi - lo)
}

fn assert_monotone(result: &SfsResult) {
    for w in result.report.history.windows(2) {
        assert!(w[1] <= w[0], "residual rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn hemisphere_bump() {
    let surface = SyntheticSurface::Hemisphere {
        base: 2.0,
        height: 0.6,
        radius: 1.0,
    };
    let (truth, res) = roundtrip(surface, [0.0; 3]);
    assert!(res.report.converged);
    assert!(res.report.residual < 1e-4);
    let (rmse, range) = interior_error(&truth, &res);
    assert!(rmse < 0.05 * range, "rmse {rmse} range {range}");
    assert_monotone(&res);
}

#[test]
fn offset_light_tilted_plane_and_relief() {
    for surface in [
        SyntheticSurface::TiltedPlane {
            base: 1.5,
            slope: [0.6, 0.3],
        },
        SyntheticSurface::Sinusoid {
            base: 1.5,
            amplitude: 0.1,
            frequency: 3.0,
        },
    ] {
        let (truth, res) = roundtrip(surface, [0.02, -0.01, 0.03]);
        assert!(res.report.converged, "{}", surface.name());
        let (rmse, range) = interior_error(&truth, &res);
        assert!(rmse < 0.05 * range, "{}: rmse {rmse} range {range}", surface.name());
        assert_monotone(&res);
    }
}

#[test]
fn recovered_depth_is_deterministic() {
    let surface = SyntheticSurface::Hemisphere {
        base: 1.8,
        height: 0.4,
        radius: 0.9,
    };
    let (_, a) = roundtrip(surface, [0.0; 3]);
    let (_, b) = roundtrip(surface, [0.0; 3]);
    assert_eq!(a.log_depth.values, b.log_depth.values);
    assert_eq!(a.report, b.report);
}
