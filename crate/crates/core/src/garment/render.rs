use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Attr, AttributeVector};

pub const HUE_BINS: usize = 18;
pub const SHAPE_RATIOS: usize = 8;
pub const FEATURE_DIM: usize = HUE_BINS + SHAPE_RATIOS;
pub const MAX_PATTERN_STROKES: usize = 30;

// Canvas and silhouette constants, in SVG user units.
pub(super) const CANVAS_W: f64 = 240.0;
pub(super) const CANVAS_H: f64 = 360.0;
pub(super) const CENTER_X: f64 = 120.0;
pub(super) const SHOULDER_Y: f64 = 70.0;
pub(super) const SHOULDER_HALF: f64 = 42.0;
pub(super) const ARMPIT_HALF: f64 = 40.0;
pub(super) const ARMPIT_Y: f64 = 96.0;
pub(super) const NECK_HALF: f64 = 20.0;
pub(super) const NECK_MIN: f64 = 6.0;
pub(super) const NECK_RANGE: f64 = 54.0;
pub(super) const WAIST_Y: f64 = 150.0;
pub(super) const WAIST_LOOSE: f64 = 42.0;
pub(super) const WAIST_RANGE: f64 = 20.0;
pub(super) const HEM_MIN: f64 = 180.0;
pub(super) const HEM_RANGE: f64 = 160.0;
pub(super) const SLEEVE_MIN: f64 = 10.0;
pub(super) const SLEEVE_RANGE: f64 = 110.0;
const SLEEVE_ANGLE_DEG: f64 = 65.0;
const FLARE_BASE: f64 = 18.0;
const FLARE_SLOPE: f64 = 0.3;
pub(super) const FILL_SATURATION: f64 = 0.70;
pub(super) const FILL_VALUE: f64 = 0.88;

/// A rendered garment: SVG markup plus a fixed-length feature vector derived
/// from the same geometry (18-bin hue histogram followed by 8 shape ratios).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarmentRender {
    pub svg: String,
    pub features: [f64; FEATURE_DIM],
}

struct Geometry {
    neck_depth: f64,
    waist_half: f64,
    hem_y: f64,
    hem_half: f64,
    sleeve_len: f64,
    strokes: usize,
    hue: f64,
}

impl Geometry {
    fn new(a: &AttributeVector) -> Self {
        let waist_half = WAIST_LOOSE - WAIST_RANGE * a.get(Attr::WaistFit);
        let hem_y = HEM_MIN + HEM_RANGE * a.get(Attr::GarmentLength);
        Self {
            neck_depth: NECK_MIN + NECK_RANGE * a.get(Attr::NecklineDepth),
            waist_half,
            hem_y,
            hem_half: waist_half + FLARE_BASE + FLARE_SLOPE * (hem_y - WAIST_Y),
            sleeve_len: SLEEVE_MIN + SLEEVE_RANGE * a.get(Attr::SleeveLength),
            strokes: (a.get(Attr::PatternDensity) * MAX_PATTERN_STROKES as f64).round() as usize,
            hue: a.get(Attr::Hue).rem_euclid(1.0),
        }
    }

    fn body(&self) -> Vec<(f64, f64)> {
        let cx = CENTER_X;
        vec![
            (cx - SHOULDER_HALF, SHOULDER_Y),
            (cx - NECK_HALF, SHOULDER_Y),
            (cx, SHOULDER_Y + self.neck_depth),
            (cx + NECK_HALF, SHOULDER_Y),
            (cx + SHOULDER_HALF, SHOULDER_Y),
            (cx + ARMPIT_HALF, ARMPIT_Y),
            (cx + self.waist_half, WAIST_Y),
            (cx + self.hem_half, self.hem_y),
            (cx - self.hem_half, self.hem_y),
            (cx - self.waist_half, WAIST_Y),
            (cx - ARMPIT_HALF, ARMPIT_Y),
        ]
    }

    /// Quadrilateral from the shoulder, out along the sleeve axis, back to the armpit.
    fn sleeve(&self, side: f64) -> Vec<(f64, f64)> {
        let angle = SLEEVE_ANGLE_DEG.to_radians();
        let (dx, dy) = (
            side * angle.cos() * self.sleeve_len,
            angle.sin() * self.sleeve_len,
        );
        let shoulder = (CENTER_X + side * SHOULDER_HALF, SHOULDER_Y);
        let armpit = (CENTER_X + side * ARMPIT_HALF, ARMPIT_Y);
        vec![
            shoulder,
            (shoulder.0 + dx, shoulder.1 + dy),
            (armpit.0 + dx, armpit.1 + dy),
            armpit,
        ]
    }
}

fn polygon_area(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (x0, y0) = points[i];
            let (x1, y1) = points[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    twice.abs() / 2.0
}

fn path_data(points: &[(f64, f64)]) -> String {
    let mut d = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{cmd} {x:.2} {y:.2} ");
    }
    d.push('Z');
    d
}

/// HSV → 8-bit RGB. `h` in degrees, `s` and `v` in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to8 = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (to8(r), to8(g), to8(b))
}

fn hex(h: f64, s: f64, v: f64) -> String {
    let (r, g, b) = hsv_to_rgb(h, s, v);
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn hue_histogram(hue: f64) -> [f64; HUE_BINS] {
    let mut hist = [0.0; HUE_BINS];
    let pos = hue.rem_euclid(1.0) * HUE_BINS as f64;
    let lo = pos.floor();
    let frac = pos - lo;
    let lo = lo as usize % HUE_BINS;
    hist[lo] += 1.0 - frac;
    hist[(lo + 1) % HUE_BINS] += frac;
    hist
}

/// Deterministic SVG for a dress with the given attributes.
pub fn render(attributes: &AttributeVector) -> GarmentRender {
    let g = Geometry::new(attributes);
    let body = g.body();
    let left = g.sleeve(-1.0);
    let right = g.sleeve(1.0);
    let hue_deg = g.hue * 360.0;
    let fill = hex(hue_deg, FILL_SATURATION, FILL_VALUE);
    let ink = hex(hue_deg, FILL_SATURATION, 0.55);
    let body_d = path_data(&body);

    let mut svg = String::with_capacity(2048);
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS_W}" height="{CANVAS_H}" viewBox="0 0 {CANVAS_W} {CANVAS_H}">"#
    );
    let _ = write!(
        svg,
        r#"<defs><clipPath id="body-clip"><path d="{body_d}"/></clipPath></defs>"#
    );
    svg.push_str(r##"<rect width="100%" height="100%" fill="#fafafa"/>"##);
    for (id, pts) in [("sleeve-left", &left), ("sleeve-right", &right)] {
        let _ = write!(
            svg,
            r##"<path id="{id}" d="{}" fill="{fill}" stroke="#2b2b2b" stroke-width="1.5"/>"##,
            path_data(pts)
        );
    }
    let _ = write!(
        svg,
        r##"<path id="body" d="{body_d}" fill="{fill}" stroke="#2b2b2b" stroke-width="1.5"/>"##
    );
    let _ = write!(
        svg,
        r#"<g id="pattern" clip-path="url(#body-clip)" stroke="{ink}" stroke-width="2">"#
    );
    let top = SHOULDER_Y + 12.0;
    let step = (g.hem_y - top) / g.strokes.max(1) as f64;
    for i in 0..g.strokes {
        let y = top + (i as f64 + 0.5) * step;
        let _ = write!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#,
            CENTER_X - g.hem_half,
            CENTER_X + g.hem_half
        );
    }
    svg.push_str("</g></svg>");

    let sleeve_area = polygon_area(&left) + polygon_area(&right);
    let body_area = polygon_area(&body);
    let bodice = WAIST_Y - SHOULDER_Y;
    let ratios = [
        g.sleeve_len / (2.0 * SHOULDER_HALF),
        (g.hem_y - SHOULDER_Y) / CANVAS_H,
        g.waist_half / SHOULDER_HALF,
        g.neck_depth / bodice,
        g.hem_half / g.waist_half,
        g.strokes as f64 / MAX_PATTERN_STROKES as f64,
        (g.hem_y - WAIST_Y) / bodice,
        sleeve_area / (sleeve_area + body_area),
    ];
    let mut features = [0.0; FEATURE_DIM];
    features[..HUE_BINS].copy_from_slice(&hue_histogram(g.hue));
    features[HUE_BINS..].copy_from_slice(&ratios);

    GarmentRender { svg, features }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_at_hue_zero() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), (255, 0, 0));
        let r = render(&AttributeVector::uniform(0.5).with(Attr::Hue, 0.0));
        let (rr, gg, bb) = hsv_to_rgb(0.0, FILL_SATURATION, FILL_VALUE);
        assert!(rr > gg && gg == bb);
        assert!(r
            .svg
            .contains(&format!("fill=\"#{rr:02x}{gg:02x}{bb:02x}\"")));
    }

    #[test]
    fn hsv_primary_colors() {
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), (0, 255, 0));
        assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), (0, 0, 255));
        assert_eq!(hsv_to_rgb(60.0, 1.0, 1.0), (255, 255, 0));
        assert_eq!(hsv_to_rgb(0.0, 0.0, 0.5), (128, 128, 128));
    }

    #[test]
    fn histogram_is_a_unit_mass() {
        for h in [0.0, 0.01, 0.5, 0.999] {
            let hist = hue_histogram(h);
            assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(hue_histogram(0.0)[0], 1.0);
    }

    #[test]
    fn render_is_deterministic_and_well_formed() {
        let a = AttributeVector::new([0.1, 0.9, 0.3, 0.7, 0.5, 0.6]).unwrap();
        let r1 = render(&a);
        let r2 = render(&a);
        assert_eq!(r1, r2);
        assert!(r1.svg.starts_with("<svg") && r1.svg.ends_with("</svg>"));
        assert_eq!(r1.svg.matches("<line").count(), 15);
        assert!(r1.features.iter().all(|f| f.is_finite()));
    }

    #[test]
    fn sleeve_ratio_grows_with_sleeve_length() {
        let a = AttributeVector::uniform(0.5);
        let short = render(&a.with(Attr::SleeveLength, 0.0));
        let long = render(&a.with(Attr::SleeveLength, 1.0));
        assert!(long.features[HUE_BINS] > short.features[HUE_BINS]);
    }
}
