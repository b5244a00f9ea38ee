//! Reads attributes back out of rendered SVG markup. This is the ground
//! truth used to score edits, so it works from the markup alone and never
//! sees the attribute vector that produced it.

use super::render::{
    GarmentRender, CENTER_X, HEM_MIN, HEM_RANGE, MAX_PATTERN_STROKES, NECK_MIN, NECK_RANGE,
    SLEEVE_MIN, SLEEVE_RANGE, WAIST_LOOSE, WAIST_RANGE,
};
use super::{Attr, AttributeVector, GarmentError, ATTRIBUTE_COUNT};

fn err(msg: impl Into<String>) -> GarmentError {
    GarmentError::Measure(msg.into())
}

/// Returns the opening tag of the element carrying `id="..."`.
fn element<'a>(svg: &'a str, id: &str) -> Result<&'a str, GarmentError> {
    let needle = format!(r#"id="{id}""#);
    let at = svg
        .find(&needle)
        .ok_or_else(|| err(format!("no element with id `{id}`")))?;
    let start = svg[..at]
        .rfind('<')
        .ok_or_else(|| err("malformed markup"))?;
    let end = svg[at..]
        .find('>')
        .map(|o| at + o)
        .ok_or_else(|| err("unterminated tag"))?;
    Ok(&svg[start..=end])
}

fn attribute<'a>(tag: &'a str, name: &str) -> Result<&'a str, GarmentError> {
    let needle = format!(r#" {name}=""#);
    let at = tag
        .find(&needle)
        .ok_or_else(|| err(format!("missing attribute `{name}`")))?
        + needle.len();
    let end = tag[at..]
        .find('"')
        .ok_or_else(|| err("unterminated attribute"))?;
    Ok(&tag[at..at + end])
}

fn path_points(d: &str) -> Result<Vec<(f64, f64)>, GarmentError> {
    let mut nums = Vec::new();
    for tok in d.split_whitespace() {
        match tok {
            "M" | "L" | "Z" => {}
            _ => nums.push(
                tok.parse::<f64>()
                    .map_err(|_| err(format!("bad path number `{tok}`")))?,
            ),
        }
    }
    if nums.len() % 2 != 0 {
        return Err(err("odd coordinate count in path"));
    }
    Ok(nums.chunks(2).map(|c| (c[0], c[1])).collect())
}

fn hex_rgb(color: &str) -> Result<(f64, f64, f64), GarmentError> {
    let hex = color
        .strip_prefix('#')
        .filter(|h| h.len() == 6)
        .ok_or_else(|| err(format!("unsupported color `{color}`")))?;
    let channel = |i: usize| {
        u8::from_str_radix(&hex[i..i + 2], 16)
            .map(|v| f64::from(v) / 255.0)
            .map_err(|_| err(format!("bad color `{color}`")))
    };
    Ok((channel(0)?, channel(2)?, channel(4)?))
}

/// Hue in `[0, 1)` of an RGB triple.
fn rgb_hue(r: f64, g: f64, b: f64) -> f64 {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    if c == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    (h / 6.0).rem_euclid(1.0)
}

pub fn measure_svg(svg: &str) -> Result<AttributeVector, GarmentError> {
    let body_tag = element(svg, "body")?;
    let body = path_points(attribute(body_tag, "d")?)?;
    if body.len() != 11 {
        return Err(err(format!(
            "body outline has {} points, expected 11",
            body.len()
        )));
    }
    let shoulder_y = body[0].1;
    let center_x = (body[0].0 + body[4].0) / 2.0;
    if (center_x - CENTER_X).abs() > 1e-6 {
        return Err(err("garment is not centered"));
    }

    let mut sleeve_lengths = Vec::with_capacity(2);
    for id in ["sleeve-left", "sleeve-right"] {
        let pts = path_points(attribute(element(svg, id)?, "d")?)?;
        if pts.len() != 4 {
            return Err(err(format!("{id} has {} points, expected 4", pts.len())));
        }
        sleeve_lengths.push((pts[1].0 - pts[0].0).hypot(pts[1].1 - pts[0].1));
    }
    let sleeve = sleeve_lengths.iter().sum::<f64>() / 2.0;

    let pattern_start = svg
        .find(r#"id="pattern""#)
        .ok_or_else(|| err("no pattern group"))?;
    let pattern_end = svg[pattern_start..]
        .find("</g>")
        .ok_or_else(|| err("unterminated pattern group"))?;
    let strokes = svg[pattern_start..pattern_start + pattern_end]
        .matches("<line")
        .count();

    let (r, g, b) = hex_rgb(attribute(body_tag, "fill")?)?;

    let mut values = [0.0; ATTRIBUTE_COUNT];
    values[Attr::SleeveLength.index()] = (sleeve - SLEEVE_MIN) / SLEEVE_RANGE;
    values[Attr::GarmentLength.index()] = (body[7].1 - HEM_MIN) / HEM_RANGE;
    values[Attr::WaistFit.index()] = (WAIST_LOOSE - (body[6].0 - center_x)) / WAIST_RANGE;
    values[Attr::NecklineDepth.index()] = (body[2].1 - shoulder_y - NECK_MIN) / NECK_RANGE;
    values[Attr::PatternDensity.index()] = strokes as f64 / MAX_PATTERN_STROKES as f64;
    values[Attr::Hue.index()] = rgb_hue(r, g, b);
    for v in &mut values[..Attr::Hue.index()] {
        *v = v.clamp(0.0, 1.0);
    }
    AttributeVector::new(values)
}

/// Recovers the attribute vector from a render's geometry and fill color.
pub fn measure(render: &GarmentRender) -> Result<AttributeVector, GarmentError> {
    measure_svg(&render.svg)
}
