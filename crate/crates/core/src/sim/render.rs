//! Ego-centric top-down raster. The car sits at the image centre facing up.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::car::CarState;
use super::condition::Condition;
use super::track::{point_segment, Track};

pub const VIEW_METERS: f64 = 24.0;
pub const ROAD: f32 = 0.6;
pub const OFF_ROAD: f32 = 0.1;
pub const OBSTACLE: f32 = 0.9;
pub const CAR: f32 = 1.0;
const CAR_HALF_LENGTH: f64 = 2.0;
const CAR_HALF_WIDTH: f64 = 1.0;

/// Noise-free raster before any condition is applied.
pub fn render_base(track: &Track, car: &CarState, size: usize) -> Vec<f32> {
    let res = VIEW_METERS / size as f64;
    let half = size as f64 / 2.0;
    let hw = track.half_width();
    let (c, s) = (car.psi.cos(), car.psi.sin());
    // Car frame: (forward, right) metres from the car.
    let to_car = |p: [f64; 2]| {
        let (dx, dy) = (p[0] - car.x, p[1] - car.y);
        [dx * c + dy * s, -dx * s + dy * c]
    };
    // Pixel (row, col) centre in the car frame.
    let fwd_of = |r: usize| (half - r as f64 - 0.5) * res;
    let right_of = |col: usize| (col as f64 - half + 0.5) * res;
    // Inclusive pixel index range covering car-frame interval [lo, hi].
    let cols_for = |lo: f64, hi: f64| {
        let a = ((lo / res + half - 0.5).ceil().max(0.0)) as usize;
        let b = (hi / res + half - 0.5).floor();
        (a, if b < 0.0 { None } else { Some((b as usize).min(size - 1)) })
    };
    let rows_for = |lo: f64, hi: f64| {
        let a = ((half - 0.5 - hi / res).ceil().max(0.0)) as usize;
        let b = (half - 0.5 - lo / res).floor();
        (a, if b < 0.0 { None } else { Some((b as usize).min(size - 1)) })
    };

    let mut img = vec![OFF_ROAD; size * size];
    let view = VIEW_METERS / 2.0 + hw;
    for i in 0..track.segment_count() {
        let (a, b) = track.segment(i);
        let (a, b) = (to_car(a), to_car(b));
        let (f0, f1) = (a[0].min(b[0]) - hw, a[0].max(b[0]) + hw);
        let (r0, r1) = (a[1].min(b[1]) - hw, a[1].max(b[1]) + hw);
        if f1 < -view || f0 > view || r1 < -view || r0 > view {
            continue;
        }
        let (row_a, row_b) = rows_for(f0, f1);
        let (col_a, col_b) = cols_for(r0, r1);
        let (Some(row_b), Some(col_b)) = (row_b, col_b) else { continue };
        for row in row_a..=row_b {
            for col in col_a..=col_b {
                let px = &mut img[row * size + col];
                if *px == ROAD {
                    continue;
                }
                let d = point_segment([fwd_of(row), right_of(col)], a, b).0;
                if d * d <= hw * hw {
                    *px = ROAD;
                }
            }
        }
    }
    for o in track.obstacles() {
        let p = to_car(o.center);
        let (row_a, row_b) = rows_for(p[0] - o.radius, p[0] + o.radius);
        let (col_a, col_b) = cols_for(p[1] - o.radius, p[1] + o.radius);
        let (Some(row_b), Some(col_b)) = (row_b, col_b) else { continue };
        for row in row_a..=row_b {
            for col in col_a..=col_b {
                let (df, dr) = (fwd_of(row) - p[0], right_of(col) - p[1]);
                if df * df + dr * dr <= o.radius * o.radius {
                    img[row * size + col] = OBSTACLE;
                }
            }
        }
    }
    for row in 0..size {
        for col in 0..size {
            if fwd_of(row).abs() <= CAR_HALF_LENGTH && right_of(col).abs() <= CAR_HALF_WIDTH {
                img[row * size + col] = CAR;
            }
        }
    }
    img
}

/// Brightness, then clamped Gaussian noise, then box blur.
pub fn apply_condition<R: Rng + ?Sized>(img: &mut [f32], size: usize, cond: &Condition, rng: &mut R) {
    let b = cond.brightness as f32;
    for v in img.iter_mut() {
        *v = (*v * b).clamp(0.0, 1.0);
    }
    if cond.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cond.noise_sigma).expect("finite sigma");
        for v in img.iter_mut() {
            *v = (*v + normal.sample(rng) as f32).clamp(0.0, 1.0);
        }
    }
    if cond.blur_radius > 0 {
        box_blur(img, size, cond.blur_radius as usize);
    }
}

fn box_blur(img: &mut [f32], size: usize, radius: usize) {
    let src = img.to_vec();
    for r in 0..size {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(size - 1));
        for c in 0..size {
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(size - 1));
            let mut sum = 0.0f32;
            for rr in r0..=r1 {
                sum += src[rr * size + c0..=rr * size + c1].iter().sum::<f32>();
            }
            img[r * size + c] = (sum / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f32).clamp(0.0, 1.0);
        }
    }
}

pub fn render_observation<R: Rng + ?Sized>(
    track: &Track,
    car: &CarState,
    cond: &Condition,
    size: usize,
    rng: &mut R,
) -> Vec<f32> {
    let mut img = render_base(track, car, size);
    apply_condition(&mut img, size, cond, rng);
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::condition::Preset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn start() -> CarState {
        CarState { x: 0.0, y: 0.0, psi: 0.0, v: 0.0 }
    }

    #[test]
    fn straight_layout() {
        let t = Track::default_circuit();
        let img = render_base(&t, &start(), 48);
        // Centre is the car; columns beyond 3.5 m to either side are off-road.
        assert_eq!(img[24 * 48 + 24], CAR);
        assert_eq!(img[2 * 48 + 24], ROAD);
        assert_eq!(img[2 * 48 + 24 + 6], ROAD);
        assert_eq!(img[2 * 48 + 24 + 8], OFF_ROAD);
        assert_eq!(img[2 * 48 + 24 - 9], OFF_ROAD);
    }

    /// Per-pixel world-space classification, no culling.
    fn naive(track: &Track, car: &CarState, size: usize) -> Vec<f32> {
        let res = VIEW_METERS / size as f64;
        let half = size as f64 / 2.0;
        let (c, s) = (car.psi.cos(), car.psi.sin());
        let mut img = vec![OFF_ROAD; size * size];
        for r in 0..size {
            for col in 0..size {
                let (f, rt) = ((half - r as f64 - 0.5) * res, (col as f64 - half + 0.5) * res);
                let p = [car.x + f * c - rt * s, car.y + f * s + rt * c];
                img[r * size + col] = if f.abs() <= CAR_HALF_LENGTH && rt.abs() <= CAR_HALF_WIDTH {
                    CAR
                } else if track.obstacles().iter().any(|o| (p[0] - o.center[0]).hypot(p[1] - o.center[1]) <= o.radius) {
                    OBSTACLE
                } else if track.project(p).distance <= track.half_width() {
                    ROAD
                } else {
                    OFF_ROAD
                };
            }
        }
        img
    }

    #[test]
    fn culled_raster_matches_naive() {
        let mut spec = Track::default_circuit().spec().clone();
        spec.obstacles.push(crate::sim::Obstacle { center: [20.0, 1.5], radius: 1.2 });
        let t = Track::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..40 {
            use rand::Rng as _;
            let (p, tan) = t.pose_at(rng.random_range(0.0..t.perimeter()));
            let car = CarState {
                x: p[0] + rng.random_range(-3.0..3.0),
                y: p[1] + rng.random_range(-3.0..3.0),
                psi: tan[1].atan2(tan[0]) + rng.random_range(-0.5..0.5),
                v: 0.0,
            };
            let (a, b) = (render_base(&t, &car, 48), naive(&t, &car, 48));
            let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            assert!(diff <= 2, "{diff} pixels differ");
        }
    }

    #[test]
    fn brightness_scales_linearly() {
        let t = Track::default_circuit();
        let base = render_base(&t, &start(), 48);
        let mut dim = base.clone();
        let cond = Condition { preset: Preset::Dusk, brightness: 0.5, noise_sigma: 0.0, blur_radius: 0 };
        apply_condition(&mut dim, 48, &cond, &mut ChaCha8Rng::seed_from_u64(0));
        for (x, y) in base.iter().zip(&dim) {
            assert_eq!(*y, x * 0.5);
        }
    }

    #[test]
    fn seeded_noise_reproduces_and_stays_in_range() {
        let t = Track::default_circuit();
        let cond = Condition { preset: Preset::Rain, brightness: 0.8, noise_sigma: 0.1, blur_radius: 1 };
        let a = render_observation(&t, &start(), &cond, 48, &mut ChaCha8Rng::seed_from_u64(5));
        let b = render_observation(&t, &start(), &cond, 48, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn neutral_condition_is_identity() {
        let t = Track::default_circuit();
        let base = render_base(&t, &start(), 48);
        let mut img = base.clone();
        apply_condition(&mut img, 48, &Condition::neutral(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(img, base);
    }
}
