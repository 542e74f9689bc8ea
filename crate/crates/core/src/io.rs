//! CSV tables and PPM heatmaps for solver output.

use std::io::Write;

use crate::error::Result;
use crate::grid::{GridSpec, PointState};
use crate::linalg::Vec2;
use crate::march::SolutionField;
use crate::post::MapPolyline;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per mesh point:
/// `ix, iy, x, y, U, Ux, Uy, state, order, p1, p2, lambda, updlen`.
/// Values that do not exist for a point are left empty.
pub fn write_solution_csv<W: Write>(sol: &SolutionField, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["ix", "iy", "x", "y", "U", "Ux", "Uy", "state", "order", "p1", "p2", "lambda", "updlen"])?;
    let rank = sol.acceptance_rank();
    for i in 0..sol.grid.len() {
        let (ix, iy) = sol.grid.coords(i);
        let p = sol.grid.point(i);
        let r = &sol.records[i];
        let known = r.state != PointState::Unknown && r.jet.is_finite();
        let (p1, p2) = match r.parents {
            Some((a, b)) => (a.to_string(), b.to_string()),
            None => (String::new(), String::new()),
        };
        out.write_record([
            ix.to_string(),
            iy.to_string(),
            p[0].to_string(),
            p[1].to_string(),
            opt(known.then_some(r.jet.u)),
            opt(known.then_some(r.jet.g[0])),
            opt(known.then_some(r.jet.g[1])),
            r.state.as_str().to_string(),
            rank[i].map(|k| k.to_string()).unwrap_or_default(),
            p1,
            p2,
            opt(r.parents.map(|_| r.lambda)),
            opt(r.parents.map(|_| r.update_length)),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `ix, iy, x, y` followed by one column per named scalar; invalid
/// entries are left empty.
pub fn write_scalar_fields_csv<W: Write>(grid: &GridSpec, columns: &[(&str, &[f64], Option<&[bool]>)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["ix".to_string(), "iy".to_string(), "x".to_string(), "y".to_string()];
    header.extend(columns.iter().map(|c| c.0.to_string()));
    out.write_record(&header)?;
    for i in 0..grid.len() {
        let (ix, iy) = grid.coords(i);
        let p = grid.point(i);
        let mut row = vec![ix.to_string(), iy.to_string(), p[0].to_string(), p[1].to_string()];
        for (_, values, valid) in columns {
            let ok = valid.is_none_or(|v| v[i]) && values[i].is_finite();
            row.push(opt(ok.then_some(values[i])));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Components and Euclidean norm under the three given column names.
pub fn write_vector_field_csv<W: Write>(grid: &GridSpec, names: [&str; 3], values: &[Vec2], valid: &[bool], w: W) -> Result<()> {
    let a: Vec<f64> = values.iter().map(|v| v[0]).collect();
    let b: Vec<f64> = values.iter().map(|v| v[1]).collect();
    let norm: Vec<f64> = values.iter().map(|v| v[0].hypot(v[1])).collect();
    write_scalar_fields_csv(grid, &[(names[0], &a, Some(valid)), (names[1], &b, Some(valid)), (names[2], &norm, Some(valid))], w)
}

/// `s, x, y` along a polyline.
pub fn write_polyline_csv<W: Write>(map: &MapPolyline, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["s", "x", "y"])?;
    for (p, s) in map.points.iter().zip(&map.arclength) {
        out.write_record([s.to_string(), p[0].to_string(), p[1].to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Anchor colours of the heatmap ramp, dark to light.
const ANCHORS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// The fixed 256-entry colour table used by [`heatmap_ppm`].
pub fn palette() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    for (k, entry) in table.iter_mut().enumerate() {
        let t = k as f64 / 255.0 * (ANCHORS.len() - 1) as f64;
        let j = (t.floor() as usize).min(ANCHORS.len() - 2);
        let s = t - j as f64;
        for c in 0..3 {
            entry[c] = ((1.0 - s) * ANCHORS[j][c] + s * ANCHORS[j + 1][c]).round() as u8;
        }
    }
    table
}

pub const MISSING_COLOUR: [u8; 3] = [0, 0, 0];

/// Binary PPM (`P6`) with one pixel per mesh point, +y up. Values are
/// scaled linearly between the smallest and largest valid entries.
pub fn heatmap_ppm(grid: &GridSpec, values: &[f64], valid: &[bool]) -> Vec<u8> {
    let ok = |i: usize| valid[i] && values[i].is_finite();
    let (lo, hi) = (0..grid.len())
        .filter(|&i| ok(i))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), i| (a.min(values[i]), b.max(values[i])));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let table = palette();
    let mut out = format!("P6\n{} {}\n255\n", grid.nx, grid.ny).into_bytes();
    for iy in (0..grid.ny).rev() {
        for ix in 0..grid.nx {
            let i = grid.index(ix, iy);
            let px = if ok(i) {
                table[(((values[i] - lo) / span) * 255.0).round().clamp(0.0, 255.0) as usize]
            } else {
                MISSING_COLOUR
            };
            out.extend_from_slice(&px);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_layout() {
        let g = GridSpec::new([0.0, 2.0], [0.0, 1.0], 5).unwrap();
        let values: Vec<f64> = (0..g.len()).map(|i| g.point(i)[1]).collect();
        let mut valid = vec![true; g.len()];
        valid[0] = false;
        let img = heatmap_ppm(&g, &values, &valid);
        let header = b"P6\n5 3\n255\n";
        assert_eq!(&img[..header.len()], header);
        let px = &img[header.len()..];
        assert_eq!(px.len(), 3 * g.len());
        let table = palette();
        // top row holds the largest y
        assert_eq!(&px[0..3], &table[255]);
        // bottom-left pixel is the masked point
        assert_eq!(&px[3 * 10..3 * 11], &MISSING_COLOUR);
        assert_eq!(&px[3 * 11..3 * 12], &table[0]);
    }

    #[test]
    fn palette_is_monotone_in_lightness() {
        let t = palette();
        let l = |c: [u8; 3]| 0.3 * c[0] as f64 + 0.59 * c[1] as f64 + 0.11 * c[2] as f64;
        for k in 1..256 {
            assert!(l(t[k]) >= l(t[k - 1]) - 1e-9);
        }
    }

    #[test]
    fn scalar_csv_leaves_invalid_empty() {
        let g = GridSpec::new([0.0, 1.0], [0.0, 1.0], 3).unwrap();
        let v: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let mut valid = vec![true; 9];
        valid[4] = false;
        let mut buf = Vec::new();
        write_scalar_fields_csv(&g, &[("v", &v, Some(&valid))], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ix,iy,x,y,v");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[5], "1,1,0.5,0.5,");
        assert_eq!(lines[6], "2,1,1,0.5,5");
    }
}
