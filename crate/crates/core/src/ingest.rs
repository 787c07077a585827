//! Chromatogram matrices, single ion chromatograms and the on-disk CSV formats.
//!
//! A matrix file is a plain CSV whose first header cell is `rt` and whose
//! remaining header cells are m/z values. Every following row holds one scan:
//! the retention time in minutes, then one intensity per m/z column.
//! Fractional m/z headers are rounded to the nearest integer and columns that
//! land on the same integer are summed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Peak;

const SPACING_RTOL: f64 = 1e-6;

/// Intensity grid for one sample, rows indexed by retention time and columns
/// by integer m/z.
#[derive(Clone, Debug, PartialEq)]
pub struct ChromatogramMatrix {
    sample_id: String,
    rt_axis: Vec<f64>,
    mz_axis: Vec<i64>,
    /// Row-major, `rt_axis.len() * mz_axis.len()`.
    intensity: Vec<f64>,
}

impl ChromatogramMatrix {
    pub fn new(
        sample_id: impl Into<String>,
        rt_axis: Vec<f64>,
        mz_axis: Vec<i64>,
        intensity: Vec<f64>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        validate_rt_axis(&rt_axis)?;
        if mz_axis.is_empty() {
            return Err(Error::invalid("matrix has no m/z channels"));
        }
        if mz_axis.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("m/z axis is not strictly increasing"));
        }
        if intensity.len() != rt_axis.len() * mz_axis.len() {
            return Err(Error::invalid(format!(
                "intensity grid has {} values, expected {}x{}",
                intensity.len(),
                rt_axis.len(),
                mz_axis.len()
            )));
        }
        validate_intensities(&intensity)?;
        Ok(Self {
            sample_id,
            rt_axis,
            mz_axis,
            intensity,
        })
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn rt_axis(&self) -> &[f64] {
        &self.rt_axis
    }

    pub fn mz_axis(&self) -> &[i64] {
        &self.mz_axis
    }

    pub fn n_rt(&self) -> usize {
        self.rt_axis.len()
    }

    pub fn n_mz(&self) -> usize {
        self.mz_axis.len()
    }

    /// Sampling interval in minutes.
    pub fn rt_step(&self) -> f64 {
        self.rt_axis[1] - self.rt_axis[0]
    }

    pub fn row(&self, rt_index: usize) -> &[f64] {
        let n = self.n_mz();
        &self.intensity[rt_index * n..(rt_index + 1) * n]
    }

    pub fn get(&self, rt_index: usize, mz_index: usize) -> f64 {
        self.intensity[rt_index * self.n_mz() + mz_index]
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensity
    }

    pub fn mz_index(&self, mz: i64) -> Option<usize> {
        self.mz_axis.binary_search(&mz).ok()
    }

    /// Index of the scan at `rt`, which must sit on the grid.
    pub fn rt_index(&self, rt: f64) -> Result<usize> {
        grid_index(&self.rt_axis, rt)
    }

    /// Total ion count per scan.
    pub fn total_ion_counts(&self) -> Vec<f64> {
        (0..self.n_rt()).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Multiplies every intensity by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(
            self.sample_id.clone(),
            self.rt_axis.clone(),
            self.mz_axis.clone(),
            self.intensity.iter().map(|v| v * k).collect(),
        )
    }
}

/// Intensity-vs-time trace for one m/z channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SicTrace {
    pub sample_id: String,
    pub mz: i64,
    pub rt_axis: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl SicTrace {
    pub fn new(
        sample_id: impl Into<String>,
        mz: i64,
        rt_axis: Vec<f64>,
        intensity: Vec<f64>,
    ) -> Result<Self> {
        validate_rt_axis(&rt_axis)?;
        if rt_axis.len() != intensity.len() {
            return Err(Error::invalid(format!(
                "trace has {} retention times but {} intensities",
                rt_axis.len(),
                intensity.len()
            )));
        }
        validate_intensities(&intensity)?;
        Ok(Self {
            sample_id: sample_id.into(),
            mz,
            rt_axis,
            intensity,
        })
    }

    pub fn len(&self) -> usize {
        self.intensity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensity.is_empty()
    }

    /// Sampling interval in minutes; zero for traces shorter than two points.
    pub fn rt_step(&self) -> f64 {
        if self.rt_axis.len() < 2 {
            0.0
        } else {
            self.rt_axis[1] - self.rt_axis[0]
        }
    }

    /// Index of the sample at `rt`, which must lie on the trace grid.
    pub fn index_of(&self, rt: f64) -> Result<usize> {
        grid_index(&self.rt_axis, rt)
    }

    /// Copy of this trace with replaced intensities (same axis).
    pub fn with_intensity(&self, intensity: Vec<f64>) -> Result<Self> {
        Self::new(self.sample_id.clone(), self.mz, self.rt_axis.clone(), intensity)
    }
}

fn grid_index(axis: &[f64], rt: f64) -> Result<usize> {
    if axis.is_empty() || !rt.is_finite() {
        return Err(Error::arg(format!("retention time {rt} is not on the grid")));
    }
    let step = if axis.len() > 1 { axis[1] - axis[0] } else { 1.0 };
    let pos = axis.partition_point(|&t| t < rt);
    let candidates = [pos.saturating_sub(1), pos.min(axis.len() - 1)];
    let best = candidates
        .into_iter()
        .min_by(|&a, &b| (axis[a] - rt).abs().total_cmp(&(axis[b] - rt).abs()))
        .unwrap_or(0);
    if (axis[best] - rt).abs() <= 1e-6 * step.abs().max(f64::MIN_POSITIVE) + 1e-9 {
        Ok(best)
    } else {
        Err(Error::arg(format!(
            "retention time {rt} is off the sampling grid (nearest {})",
            axis[best]
        )))
    }
}

fn validate_rt_axis(rt: &[f64]) -> Result<()> {
    if rt.len() < 2 {
        return Err(Error::invalid("retention time axis needs at least two points"));
    }
    if rt.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("retention time axis contains non-finite values"));
    }
    if let Some(i) = rt.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "retention time axis not strictly increasing at row {} ({} -> {})",
            i + 1,
            rt[i],
            rt[i + 1]
        )));
    }
    let step = rt[1] - rt[0];
    if let Some(i) = rt
        .windows(2)
        .position(|w| ((w[1] - w[0]) - step).abs() > SPACING_RTOL * step)
    {
        return Err(Error::invalid(format!(
            "retention time spacing is not uniform at row {} (step {} vs {})",
            i + 1,
            rt[i + 1] - rt[i],
            step
        )));
    }
    Ok(())
}

fn validate_intensities(values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("intensity {} at position {i} is not finite", values[i])));
    }
    if let Some(i) = values.iter().position(|&v| v < 0.0) {
        return Err(Error::invalid(format!("negative intensity {} at position {i}", values[i])));
    }
    Ok(())
}

/// Loads a matrix CSV; the sample id is the file stem.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<ChromatogramMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let sample_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_matrix(sample_id, &text)
}

pub fn parse_matrix(sample_id: impl Into<String>, text: &str) -> Result<ChromatogramMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        column: 1,
        message: "empty file".into(),
    })?;
    let mut cells = header.split(',');
    if cells.next().map(str::trim) != Some("rt") {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "first header cell must be `rt`".into(),
        });
    }
    let mut raw_mz = Vec::new();
    for (col, cell) in cells.enumerate() {
        let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
            line: 1,
            column: col + 2,
            message: format!("invalid m/z header `{cell}`"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: 1,
                column: col + 2,
                message: format!("non-finite m/z header `{cell}`"),
            });
        }
        raw_mz.push(v);
    }
    if raw_mz.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 2,
            message: "no m/z columns".into(),
        });
    }
    let (mz_axis, column_bin) = bin_mz(&raw_mz);

    let mut rt_axis = Vec::new();
    let mut intensity = Vec::new();
    for (lineno, line) in lines {
        let mut cells = line.split(',');
        let rt_cell = cells.next().unwrap_or("");
        let rt: f64 = rt_cell.trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            column: 1,
            message: format!("invalid retention time `{rt_cell}`"),
        })?;
        let mut row = vec![0.0; mz_axis.len()];
        let mut count = 0;
        for (col, cell) in cells.enumerate() {
            if col >= raw_mz.len() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    column: col + 2,
                    message: format!("row has more than {} intensity cells", raw_mz.len()),
                });
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                column: col + 2,
                message: format!("invalid intensity `{cell}`"),
            })?;
            row[column_bin[col]] += v;
            count += 1;
        }
        if count != raw_mz.len() {
            return Err(Error::Parse {
                line: lineno + 1,
                column: count + 2,
                message: format!("expected {} intensity cells, found {count}", raw_mz.len()),
            });
        }
        rt_axis.push(rt);
        intensity.extend(row);
    }
    ChromatogramMatrix::new(sample_id, rt_axis, mz_axis, intensity)
}

/// Rounds m/z values to integers. Returns the sorted unique axis and, for each
/// input column, the index of its bin.
pub fn bin_mz(raw: &[f64]) -> (Vec<i64>, Vec<usize>) {
    let rounded: Vec<i64> = raw.iter().map(|v| v.round() as i64).collect();
    let mut axis = rounded.clone();
    axis.sort_unstable();
    axis.dedup();
    let bins = rounded
        .iter()
        .map(|mz| axis.binary_search(mz).expect("rounded value is on the axis"))
        .collect();
    (axis, bins)
}

pub fn format_matrix(matrix: &ChromatogramMatrix) -> String {
    let mut out = String::from("rt");
    for mz in matrix.mz_axis() {
        write!(out, ",{mz}").unwrap();
    }
    out.push('\n');
    for (i, rt) in matrix.rt_axis().iter().enumerate() {
        write!(out, "{rt:?}").unwrap();
        for v in matrix.row(i) {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_matrix(matrix: &ChromatogramMatrix, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_matrix(matrix))?;
    Ok(())
}

/// Extracts the single ion chromatogram for `mz`.
pub fn slice_sic(matrix: &ChromatogramMatrix, mz: i64) -> Result<SicTrace> {
    let col = matrix.mz_index(mz).ok_or_else(|| Error::MzNotFound {
        mz,
        available: matrix.mz_axis().to_vec(),
    })?;
    let intensity = (0..matrix.n_rt()).map(|i| matrix.get(i, col)).collect();
    Ok(SicTrace {
        sample_id: matrix.sample_id().to_string(),
        mz,
        rt_axis: matrix.rt_axis().to_vec(),
        intensity,
    })
}

/// Keeps the samples with `rt_lo <= rt <= rt_hi`. The result may be empty.
pub fn slice_window(trace: &SicTrace, rt_lo: f64, rt_hi: f64) -> Result<SicTrace> {
    if !(rt_lo < rt_hi) {
        return Err(Error::arg(format!(
            "window lower bound {rt_lo} must be below upper bound {rt_hi}"
        )));
    }
    let lo = trace.rt_axis.partition_point(|&t| t < rt_lo);
    let hi = trace.rt_axis.partition_point(|&t| t <= rt_hi).max(lo);
    Ok(SicTrace {
        sample_id: trace.sample_id.clone(),
        mz: trace.mz,
        rt_axis: trace.rt_axis[lo..hi].to_vec(),
        intensity: trace.intensity[lo..hi].to_vec(),
    })
}

pub const PEAK_TABLE_HEADER: &str = "sample_id,mz,rt_start,rt_apex,rt_end,area,group";

pub fn format_peak_table(peaks: &[Peak]) -> String {
    let mut out = String::from(PEAK_TABLE_HEADER);
    out.push('\n');
    for p in peaks {
        writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?},{}",
            p.sample_id, p.mz, p.rt_start, p.rt_apex, p.rt_end, p.area, p.group
        )
        .unwrap();
    }
    out
}

pub fn write_peak_table(peaks: &[Peak], path: impl AsRef<Path>) -> Result<()> {
    if let Some(p) = peaks.iter().find(|p| p.sample_id.contains([',', '\n'])) {
        return Err(Error::invalid(format!("sample id `{}` contains a separator", p.sample_id)));
    }
    std::fs::write(path, format_peak_table(peaks))?;
    Ok(())
}

pub fn parse_peak_table(text: &str) -> Result<Vec<Peak>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == PEAK_TABLE_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("expected header `{PEAK_TABLE_HEADER}`"),
            })
        }
    }
    let mut peaks = Vec::new();
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 7 {
            return Err(Error::Parse {
                line: lineno + 1,
                column: cells.len().min(7) + 1,
                message: format!("expected 7 cells, found {}", cells.len()),
            });
        }
        let num = |col: usize| -> Result<f64> {
            cells[col].parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                column: col + 1,
                message: format!("invalid number `{}`", cells[col]),
            })
        };
        let int = |col: usize| -> Result<i64> {
            cells[col].parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                column: col + 1,
                message: format!("invalid integer `{}`", cells[col]),
            })
        };
        peaks.push(Peak {
            sample_id: cells[0].to_string(),
            mz: int(1)?,
            rt_start: num(2)?,
            rt_apex: num(3)?,
            rt_end: num(4)?,
            area: num(5)?,
            group: int(6)?,
        });
    }
    Ok(peaks)
}

pub fn read_peak_table(path: impl AsRef<Path>) -> Result<Vec<Peak>> {
    parse_peak_table(&std::fs::read_to_string(path)?)
}

/// Groups peaks by sample id, preserving input order within each sample.
pub fn peaks_by_sample(peaks: &[Peak]) -> BTreeMap<&str, Vec<&Peak>> {
    let mut map: BTreeMap<&str, Vec<&Peak>> = BTreeMap::new();
    for p in peaks {
        map.entry(p.sample_id.as_str()).or_default().push(p);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ChromatogramMatrix {
        parse_matrix("s1", "rt,103,115\n1.0,1,2\n1.1,3,4\n1.2,5,6\n").unwrap()
    }

    #[test]
    fn loads_axes_as_given() {
        let m = small();
        assert_eq!(m.n_rt(), 3);
        assert_eq!(m.n_mz(), 2);
        assert_eq!(m.rt_axis(), &[1.0, 1.1, 1.2]);
        assert_eq!(m.mz_axis(), &[103, 115]);
        assert_eq!(m.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn merges_columns_rounding_to_same_mz() {
        let m = parse_matrix("s", "rt,102.9,103.2\n1.0,1,2\n1.5,3,4\n").unwrap();
        assert_eq!(m.mz_axis(), &[103]);
        assert_eq!(m.intensities(), &[3.0, 7.0]);
        // the spec example: rows {1,2} and {3,4} are the two columns
        let m = parse_matrix("s", "rt,102.9,103.2\n1.0,1,3\n1.5,2,4\n").unwrap();
        assert_eq!(m.intensities(), &[4.0, 6.0]);
    }

    #[test]
    fn rejects_non_monotonic_rt() {
        let err = parse_matrix("s", "rt,103\n1.0,1\n0.9,2\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn rejects_negative_intensity_and_uneven_spacing() {
        assert!(matches!(
            parse_matrix("s", "rt,103\n1.0,1\n1.1,-2\n").unwrap_err(),
            Error::Validation(_)
        ));
        assert!(matches!(
            parse_matrix("s", "rt,103\n1.0,1\n1.1,2\n1.3,2\n").unwrap_err(),
            Error::Validation(_)
        ));
    }

    #[test]
    fn parse_errors_carry_location() {
        match parse_matrix("s", "rt,103,104\n1.0,1,x\n").unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (2, 3)),
            e => panic!("unexpected {e}"),
        }
        match parse_matrix("s", "time,103\n").unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (1, 1)),
            e => panic!("unexpected {e}"),
        }
        match parse_matrix("s", "rt,103,104\n1.0,1\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn slices_single_ion_chromatograms() {
        let m = small();
        let t = slice_sic(&m, 103).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.intensity, vec![1.0, 3.0, 5.0]);
        match slice_sic(&m, 999).unwrap_err() {
            Error::MzNotFound { mz, available } => {
                assert_eq!(mz, 999);
                assert_eq!(available, vec![103, 115]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn channel_sums_reproduce_total_ion_count() {
        let m = small();
        let mut sums = vec![0.0; m.n_rt()];
        for &mz in m.mz_axis() {
            for (s, v) in sums.iter_mut().zip(slice_sic(&m, mz).unwrap().intensity) {
                *s += v;
            }
        }
        assert_eq!(sums, m.total_ion_counts());
    }

    fn long_trace() -> SicTrace {
        let rt: Vec<f64> = (0..=200).map(|i| i as f64 * 0.25).collect();
        let y = rt.iter().map(|t| t * 2.0).collect();
        SicTrace::new("s", 103, rt, y).unwrap()
    }

    #[test]
    fn window_slicing() {
        let t = long_trace();
        assert_eq!(slice_window(&t, -1.0, 60.0).unwrap(), t);
        let w = slice_window(&t, 13.9, 15.1).unwrap();
        assert_eq!(w.rt_axis, vec![14.0, 14.25, 14.5, 14.75, 15.0]);
        assert!(w.rt_axis.iter().all(|&r| (13.9..=15.1).contains(&r)));
        let empty = slice_window(&t, 60.0, 70.0).unwrap();
        assert!(empty.is_empty());
        assert!(matches!(slice_window(&t, 2.0, 2.0).unwrap_err(), Error::Argument(_)));
    }

    #[test]
    fn grid_lookup() {
        let t = long_trace();
        assert_eq!(t.index_of(14.25).unwrap(), 57);
        assert!(t.index_of(14.3).is_err());
    }

    #[test]
    fn peak_table_round_trip() {
        let peaks = vec![Peak {
            sample_id: "a".into(),
            mz: 103,
            rt_start: 1.0,
            rt_apex: 1.1,
            rt_end: 1.2000000000000002,
            area: 12.5,
            group: -1,
        }];
        let text = format_peak_table(&peaks);
        assert!(text.starts_with("sample_id,mz,rt_start,rt_apex,rt_end,area,group\n"));
        assert_eq!(parse_peak_table(&text).unwrap(), peaks);
    }
}
