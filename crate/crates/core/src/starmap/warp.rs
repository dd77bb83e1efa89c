use serde::{Deserialize, Serialize};

use super::StarMapError;
use crate::event::{Event, EventStream, Polarity};

/// The star map integrates this long around the stream midpoint.
pub const STAR_MAP_INTEGRATION_US: u64 = 3_000_000;

/// Constant apparent field velocity in px/s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityHypothesis {
    pub vx: f64,
    pub vy: f64,
}

impl VelocityHypothesis {
    pub fn new(vx: f64, vy: f64) -> Self {
        VelocityHypothesis { vx, vy }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    fn check(&self) -> Result<(), StarMapError> {
        if self.vx.is_finite() && self.vy.is_finite() {
            Ok(())
        } else {
            Err(StarMapError::InvalidVelocity(self.vx, self.vy))
        }
    }
}

impl std::ops::Neg for VelocityHypothesis {
    type Output = Self;
    fn neg(self) -> Self {
        VelocityHypothesis::new(-self.vx, -self.vy)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityMode {
    /// `b = p`: ON and OFF events both accumulate, with sign.
    #[default]
    Dual,
    /// `b = 1` for ON events; OFF events are dropped.
    MonoOn,
}

impl PolarityMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolarityMode::Dual => "dual",
            PolarityMode::MonoOn => "mono_on",
        }
    }

    fn weight(&self, p: Polarity) -> Option<f64> {
        match (self, p) {
            (PolarityMode::Dual, p) => Some(p.sign() as f64),
            (PolarityMode::MonoOn, Polarity::On) => Some(1.0),
            (PolarityMode::MonoOn, Polarity::Off) => None,
        }
    }
}

/// How a warped event deposits its weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splat {
    /// Whole weight into the nearest pixel.
    #[default]
    Nearest,
    /// Weight shared among the four surrounding pixels.
    Bilinear,
}

/// Shift an event back along the field velocity to reference time `t0`.
pub fn warp_event(e: &Event, theta: VelocityHypothesis, t0: u64) -> [f64; 2] {
    warp_point([e.x as f64, e.y as f64], e.t, theta, t0)
}

/// [`warp_event`] for an arbitrary real position observed at time `t`.
pub fn warp_point(p: [f64; 2], t: u64, theta: VelocityHypothesis, t0: u64) -> [f64; 2] {
    let dt = (t as f64 - t0 as f64) * 1e-6;
    [p[0] - theta.vx * dt, p[1] - theta.vy * dt]
}

/// Accumulated warped events over one window, padded to hold the whole
/// warped trajectory. `event_index` is stored CSR-style: events landing on
/// frame pixel `i` are `indices[offsets[i]..offsets[i + 1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AccumulationFrame {
    pub width: usize,
    pub height: usize,
    /// Frame pixel (0, 0) sits at sensor coordinates `(-pad[0], -pad[1])`.
    pub pad: [usize; 2],
    pub values: Vec<f64>,
    pub offsets: Vec<u32>,
    pub indices: Vec<u32>,
    pub theta: VelocityHypothesis,
    pub t_start: u64,
    pub integration: u64,
    pub mode: PolarityMode,
    pub splat: Splat,
    /// Events in the window that warped outside the frame.
    pub out_of_bounds: usize,
    /// No events fell inside the window.
    pub empty_window: bool,
}

impl AccumulationFrame {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events_at(&self, pixel: usize) -> &[u32] {
        &self.indices[self.offsets[pixel] as usize..self.offsets[pixel + 1] as usize]
    }

    pub fn coords(&self, pixel: usize) -> (usize, usize) {
        (pixel % self.width, pixel / self.width)
    }

    /// Sensor coordinates of a frame pixel centre.
    pub fn to_sensor(&self, fx: f64, fy: f64) -> [f64; 2] {
        [fx - self.pad[0] as f64, fy - self.pad[1] as f64]
    }

    /// Frame pixel an event lands on, if inside.
    pub fn pixel_of(&self, e: &Event) -> Option<usize> {
        let w = warp_event(e, self.theta, self.t_start);
        let fx = w[0].round() + self.pad[0] as f64;
        let fy = w[1].round() + self.pad[1] as f64;
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            None
        } else {
            Some(fy as usize * self.width + fx as usize)
        }
    }

    pub fn window_s(&self) -> f64 {
        self.integration as f64 * 1e-6
    }

    pub fn n_indexed(&self) -> usize {
        self.indices.len()
    }
}

pub fn accumulate(
    stream: &EventStream,
    theta: VelocityHypothesis,
    t_start: u64,
    integration: u64,
    mode: PolarityMode,
) -> Result<AccumulationFrame, StarMapError> {
    accumulate_with(stream, theta, t_start, integration, mode, Splat::Nearest)
}

pub fn accumulate_with(
    stream: &EventStream,
    theta: VelocityHypothesis,
    t_start: u64,
    integration: u64,
    mode: PolarityMode,
    splat: Splat,
) -> Result<AccumulationFrame, StarMapError> {
    if integration == 0 {
        return Err(StarMapError::ZeroIntegration);
    }
    theta.check()?;
    let g = stream.geometry();
    let t_s = integration as f64 * 1e-6;
    let pad = [
        (theta.vx.abs() * t_s).ceil() as usize,
        (theta.vy.abs() * t_s).ceil() as usize,
    ];
    let width = g.width as usize + 2 * pad[0];
    let height = g.height as usize + 2 * pad[1];
    let range = stream.time_range(t_start, t_start.saturating_add(integration));
    let mut frame = AccumulationFrame {
        width,
        height,
        pad,
        values: vec![0.0; width * height],
        offsets: Vec::new(),
        indices: Vec::new(),
        theta,
        t_start,
        integration,
        mode,
        splat,
        out_of_bounds: 0,
        empty_window: range.is_empty(),
    };

    let events = stream.events();
    let mut counts = vec![0u32; width * height + 1];
    let mut placed: Vec<(u32, u32)> = Vec::with_capacity(range.len());
    for idx in range {
        let e = &events[idx];
        let Some(b) = mode.weight(e.p) else { continue };
        let Some(pix) = frame.pixel_of(e) else {
            frame.out_of_bounds += 1;
            continue;
        };
        match splat {
            Splat::Nearest => frame.values[pix] += b,
            Splat::Bilinear => {
                let w = warp_event(e, theta, t_start);
                bilinear(&mut frame, w[0] + pad[0] as f64, w[1] + pad[1] as f64, b);
            }
        }
        counts[pix + 1] += 1;
        placed.push((pix as u32, idx as u32));
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let mut cursor = counts.clone();
    let mut indices = vec![0u32; placed.len()];
    for (pix, idx) in placed {
        let c = &mut cursor[pix as usize];
        indices[*c as usize] = idx;
        *c += 1;
    }
    frame.offsets = counts;
    frame.indices = indices;
    Ok(frame)
}

fn bilinear(frame: &mut AccumulationFrame, fx: f64, fy: f64, b: f64) {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let ax = fx - x0;
    let ay = fy - y0;
    for (dx, dy, w) in [
        (0.0, 0.0, (1.0 - ax) * (1.0 - ay)),
        (1.0, 0.0, ax * (1.0 - ay)),
        (0.0, 1.0, (1.0 - ax) * ay),
        (1.0, 1.0, ax * ay),
    ] {
        let x = x0 + dx;
        let y = y0 + dy;
        if w > 0.0 && x >= 0.0 && y >= 0.0 && x < frame.width as f64 && y < frame.height as f64 {
            frame.values[y as usize * frame.width + x as usize] += b * w;
        }
    }
}

/// The central window used for star maps: `(t_start, integration)`.
pub fn star_map_window(stream: &EventStream) -> (u64, u64) {
    let d = stream.duration_us();
    if d <= STAR_MAP_INTEGRATION_US {
        return (0, d + 1);
    }
    let start = (d / 2).saturating_sub(STAR_MAP_INTEGRATION_US / 2);
    (start, STAR_MAP_INTEGRATION_US)
}

/// Warp the central 3 s of the stream to the window start.
pub fn build_star_map(
    stream: &EventStream,
    theta: VelocityHypothesis,
    mode: PolarityMode,
) -> Result<AccumulationFrame, StarMapError> {
    let (t0, len) = star_map_window(stream);
    accumulate(stream, theta, t0, len, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::SensorGeometry;
    use proptest::prelude::*;

    fn geo() -> SensorGeometry {
        SensorGeometry::new(40, 30).unwrap()
    }

    #[test]
    fn warp_examples() {
        let e = Event::new(2_000_000, 10, 20, Polarity::On);
        assert_eq!(warp_event(&e, VelocityHypothesis::new(1.0, 0.0), 0), [8.0, 20.0]);
        assert_eq!(warp_event(&e, VelocityHypothesis::default(), 123), [10.0, 20.0]);
    }

    #[test]
    fn empty_stream_gives_zero_frame() {
        let s = EventStream::empty(geo());
        let f = accumulate(&s, VelocityHypothesis::new(3.0, -1.0), 0, 1_000_000, PolarityMode::Dual).unwrap();
        assert!(f.empty_window);
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert_eq!((f.width, f.height), (46, 32));
        assert!(accumulate(&s, VelocityHypothesis::default(), 0, 0, PolarityMode::Dual).is_err());
    }

    #[test]
    fn three_on_events_sum() {
        let evs = vec![
            Event::new(0, 5, 5, Polarity::On),
            Event::new(1_000_000, 6, 5, Polarity::On),
            Event::new(2_000_000, 7, 5, Polarity::On),
        ];
        let s = EventStream::new(evs, geo(), None).unwrap();
        let f = accumulate(&s, VelocityHypothesis::new(1.0, 0.0), 0, 3_000_000, PolarityMode::Dual).unwrap();
        let pix = f.pixel_of(&s.events()[0]).unwrap();
        assert_eq!(f.values[pix], 3.0);
        assert_eq!(f.events_at(pix), &[0, 1, 2]);
        assert_eq!(f.to_sensor(f.coords(pix).0 as f64, f.coords(pix).1 as f64), [5.0, 5.0]);
    }

    #[test]
    fn mono_drops_off() {
        let evs = vec![Event::new(0, 5, 5, Polarity::On), Event::new(1, 5, 5, Polarity::Off)];
        let s = EventStream::new(evs, geo(), None).unwrap();
        let f = accumulate(&s, VelocityHypothesis::default(), 0, 10, PolarityMode::MonoOn).unwrap();
        assert_eq!(f.values.iter().sum::<f64>(), 1.0);
        assert_eq!(f.n_indexed(), 1);
        let f = accumulate(&s, VelocityHypothesis::default(), 0, 10, PolarityMode::Dual).unwrap();
        assert_eq!(f.values.iter().sum::<f64>(), 0.0);
        assert_eq!(f.n_indexed(), 2);
    }

    #[test]
    fn bilinear_conserves_weight() {
        let evs = vec![Event::new(500_000, 10, 10, Polarity::On)];
        let s = EventStream::new(evs, geo(), None).unwrap();
        let f = accumulate_with(&s, VelocityHypothesis::new(1.0, 0.5), 0, 1_000_000, PolarityMode::Dual, Splat::Bilinear)
            .unwrap();
        assert!((f.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(f.values.iter().filter(|&&v| v > 0.0).count(), 4);
    }

    /// Naive per-event loop with the half-away-from-zero rule.
    fn naive(s: &EventStream, th: VelocityHypothesis, t0: u64, len: u64, mode: PolarityMode) -> (Vec<f64>, Vec<Vec<u32>>, usize) {
        let px = (th.vx.abs() * len as f64 * 1e-6).ceil() as i64;
        let py = (th.vy.abs() * len as f64 * 1e-6).ceil() as i64;
        let w = s.geometry().width as i64 + 2 * px;
        let h = s.geometry().height as i64 + 2 * py;
        let mut vals = vec![0.0; (w * h) as usize];
        let mut lists = vec![Vec::new(); (w * h) as usize];
        let mut oob = 0;
        for (i, e) in s.events().iter().enumerate() {
            if e.t < t0 || e.t >= t0 + len {
                continue;
            }
            let b = match (mode, e.p) {
                (PolarityMode::MonoOn, Polarity::Off) => continue,
                (PolarityMode::MonoOn, Polarity::On) => 1.0,
                (PolarityMode::Dual, p) => p.sign() as f64,
            };
            let dt = (e.t as f64 - t0 as f64) / 1e6;
            let xr = e.x as f64 - th.vx * dt;
            let yr = e.y as f64 - th.vy * dt;
            let rx = if xr >= 0.0 { (xr + 0.5).floor() } else { -((-xr + 0.5).floor()) };
            let ry = if yr >= 0.0 { (yr + 0.5).floor() } else { -((-yr + 0.5).floor()) };
            let fx = rx as i64 + px;
            let fy = ry as i64 + py;
            if fx < 0 || fy < 0 || fx >= w || fy >= h {
                oob += 1;
                continue;
            }
            vals[(fy * w + fx) as usize] += b;
            lists[(fy * w + fx) as usize].push(i as u32);
        }
        (vals, lists, oob)
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        prop::collection::vec((0u64..3_000_000, 0u16..40, 0u16..30, any::<bool>()), 0..150).prop_map(|raw| {
            let mut v: Vec<Event> = raw
                .into_iter()
                .map(|(t, x, y, on)| Event::new(t, x, y, if on { Polarity::On } else { Polarity::Off }))
                .collect();
            v.sort_by_key(|e| e.t);
            EventStream::new(v, SensorGeometry::new(40, 30).unwrap(), None).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn accumulate_matches_naive(s in arb_stream(), vx in -20.0f64..20.0, vy in -20.0f64..20.0,
                                    t0 in 0u64..1_000_000, len in 1u64..3_000_000, mono in any::<bool>()) {
            let th = VelocityHypothesis::new(vx, vy);
            let mode = if mono { PolarityMode::MonoOn } else { PolarityMode::Dual };
            let f = accumulate(&s, th, t0, len, mode).unwrap();
            let (vals, lists, oob) = naive(&s, th, t0, len, mode);
            prop_assert_eq!(&f.values, &vals);
            prop_assert_eq!(f.out_of_bounds, oob);
            for (i, l) in lists.iter().enumerate() {
                prop_assert_eq!(f.events_at(i), &l[..]);
            }
            let in_window = s.events().iter().filter(|e| e.t >= t0 && e.t < t0 + len)
                .filter(|e| !(mono && e.p == Polarity::Off)).count();
            prop_assert_eq!(f.n_indexed() + f.out_of_bounds, in_window);
        }

        #[test]
        fn warp_inverse(x in 0u16..2000, y in 0u16..2000, t in 0u64..10_000_000, vx in -2000.0f64..2000.0, vy in -2000.0f64..2000.0) {
            let e = Event::new(t, x, y, Polarity::On);
            let th = VelocityHypothesis::new(vx, vy);
            let w = warp_event(&e, th, 0);
            let back = warp_point(w, t, -th, 0);
            prop_assert!((back[0] - x as f64).abs() < 1e-9 && (back[1] - y as f64).abs() < 1e-9);
        }

        #[test]
        fn accumulation_is_linear(a in arb_stream(), b in arb_stream(), vx in -5.0f64..5.0) {
            let th = VelocityHypothesis::new(vx, 0.0);
            let mut all: Vec<Event> = a.events().iter().chain(b.events()).copied().collect();
            all.sort_by_key(|e| e.t);
            let u = EventStream::new(all, a.geometry(), None).unwrap();
            let fa = accumulate(&a, th, 0, 3_000_000, PolarityMode::Dual).unwrap();
            let fb = accumulate(&b, th, 0, 3_000_000, PolarityMode::Dual).unwrap();
            let fu = accumulate(&u, th, 0, 3_000_000, PolarityMode::Dual).unwrap();
            for i in 0..fu.values.len() {
                prop_assert_eq!(fu.values[i], fa.values[i] + fb.values[i]);
            }
        }
    }
}
