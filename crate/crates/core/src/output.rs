//! CSV artifacts of a run and the trace reader.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back yields bitwise the values that were written.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::constraint::ConstraintModel;
use crate::design::Bounds;
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::optimizer::{Design, RoundRecord};

/// Schema version of the files below; bump when a column set changes.
pub const SCHEMA_VERSION: u32 = 1;

pub fn trace_header(dim: usize) -> Vec<String> {
    let mut h = vec!["round".to_string()];
    h.extend((1..=dim).map(|j| format!("x{j}")));
    h.extend(["ieci", "log_reduction", "z", "c", "fmin"].map(String::from));
    h
}

/// One parsed line of `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub x: Vec<f64>,
    pub ieci: f64,
    pub log_reduction: f64,
    pub z: f64,
    pub c: u8,
    pub fmin: f64,
}

impl From<&RoundRecord> for TraceRow {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            x: r.chosen_x.clone(),
            ieci: r.ieci_value,
            log_reduction: r.expected_reduction_log,
            z: r.z_observed,
            c: r.c_observed,
            fmin: r.fmin_used,
        }
    }
}

impl TraceRow {
    fn fields(&self) -> Vec<String> {
        let mut f = vec![self.round.to_string()];
        f.extend(self.x.iter().map(f64::to_string));
        f.extend([
            self.ieci.to_string(),
            self.log_reduction.to_string(),
            self.z.to_string(),
            self.c.to_string(),
            self.fmin.to_string(),
        ]);
        f
    }
}

/// Streams trace rows to disk, flushing after each so a failed run keeps
/// every completed round.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
    dim: usize,
}

impl TraceWriter<File> {
    pub fn create(path: &Path, dim: usize) -> Result<Self> {
        Self::new(File::create(path)?, dim)
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, dim: usize) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(trace_header(dim))?;
        inner.flush()?;
        Ok(Self { inner, dim })
    }

    pub fn write(&mut self, row: &TraceRow) -> Result<()> {
        if row.x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: row.x.len() });
        }
        self.inner.write_record(row.fields())?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Parse a trace; the dimension is inferred from the header.
pub fn parse_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 7 {
        return Err(Error::Parse(format!("trace header has {} columns, need at least 7", header.len())));
    }
    let dim = header.len() - 6;
    if header != trace_header(dim) {
        return Err(Error::Parse(format!("unexpected trace header: {}", header.join(","))));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse::<f64>().map_err(|e| Error::Parse(format!("row {}, column {}: {e}", line + 1, header[i])))
        };
        let round = field(0).parse::<usize>().map_err(|e| Error::Parse(format!("row {}, round: {e}", line + 1)))?;
        let x = (1..=dim).map(num).collect::<Result<Vec<_>>>()?;
        let c = match field(dim + 4) {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::Parse(format!("row {}, c must be 0 or 1, got '{other}'", line + 1))),
        };
        rows.push(TraceRow {
            round,
            x,
            ieci: num(dim + 1)?,
            log_reduction: num(dim + 2)?,
            z: num(dim + 3)?,
            c,
            fmin: num(dim + 5)?,
        });
    }
    Ok(rows)
}

/// `x1..xD,z,c` for every evaluated point, initial design first.
pub fn write_design<W: Write>(out: W, design: &Design) -> Result<()> {
    let dim = design.x.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    header.extend(["z", "c"].map(String::from));
    w.write_record(&header)?;
    for ((x, z), c) in design.x.iter().zip(&design.z).zip(&design.c) {
        let mut rec: Vec<String> = x.iter().map(f64::to_string).collect();
        rec.push(z.to_string());
        rec.push(c.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `round,log_reduction`.
pub fn write_progress<W: Write>(out: W, progress: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "log_reduction"])?;
    for (i, v) in progress.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Grid points for plotting: `per_dim` per axis on 1-d and 2-d problems,
/// a coarser grid beyond.
pub fn surface_grid(bounds: &Bounds, per_dim: usize) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let per_dim = if d > 2 { per_dim.min(10) } else { per_dim }.max(2);
    let axis = |j: usize| -> Vec<f64> {
        let (lo, hi) = (bounds.lower()[j], bounds.upper()[j]);
        (0..per_dim).map(|i| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64).collect()
    };
    let mut grid = vec![Vec::new()];
    for j in 0..d {
        let ax = axis(j);
        grid = grid
            .into_iter()
            .flat_map(|p| {
                ax.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    grid
}

/// `x1..xD,mean,sd,prob` on a grid; `prob` is 1 without a classifier.
pub fn write_surface<W: Write>(
    out: W,
    model: &GpModel,
    classifier: Option<&ConstraintModel>,
    bounds: &Bounds,
    per_dim: usize,
) -> Result<()> {
    let d = bounds.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.extend(["mean", "sd", "prob"].map(String::from));
    w.write_record(&header)?;
    for x in surface_grid(bounds, per_dim) {
        let p = model.predict(&x)?;
        let prob = match classifier {
            Some(c) => c.predict_prob(&x)?,
            None => 1.0,
        };
        let mut rec: Vec<String> = x.iter().map(f64::to_string).collect();
        rec.extend([p.mean.to_string(), p.sd().to_string(), prob.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: usize, x: Vec<f64>) -> TraceRow {
        TraceRow { round, x, ieci: -0.125, log_reduction: -3.7, z: 0.1 + 0.2, c: 1, fmin: -1.0 / 3.0 }
    }

    #[test]
    fn trace_round_trips_bitwise() {
        let rows = vec![row(1, vec![1.0 / 7.0, -2.0]), row(2, vec![f64::MIN_POSITIVE, 1e300])];
        let mut w = TraceWriter::new(Vec::new(), 2).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("round,x1,x2,ieci,log_reduction,z,c,fmin\n"));
        assert_eq!(parse_trace(bytes.as_slice()).unwrap(), rows);
    }

    #[test]
    fn trace_rejects_malformed() {
        assert!(parse_trace("round,x1,ieci\n".as_bytes()).is_err());
        assert!(parse_trace("round,y1,ieci,log_reduction,z,c,fmin\n".as_bytes()).is_err());
        let bad_c = "round,x1,ieci,log_reduction,z,c,fmin\n1,0.5,0,0,0,2,0\n";
        assert!(parse_trace(bad_c.as_bytes()).is_err());
        let bad_num = "round,x1,ieci,log_reduction,z,c,fmin\n1,abc,0,0,0,1,0\n";
        assert!(parse_trace(bad_num.as_bytes()).is_err());
        let short = "round,x1,ieci,log_reduction,z,c,fmin\n1,0.5\n";
        assert!(parse_trace(short.as_bytes()).is_err());
        assert!(parse_trace("round,x1,ieci,log_reduction,z,c,fmin\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn writer_checks_dimension() {
        let mut w = TraceWriter::new(Vec::new(), 1).unwrap();
        assert!(w.write(&row(1, vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn grid_shapes() {
        let b1 = Bounds::new(vec![0.0], vec![7.0]).unwrap();
        let g = surface_grid(&b1, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], vec![0.0]);
        assert_eq!(g[4], vec![7.0]);
        let b2 = Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        assert_eq!(surface_grid(&b2, 4).len(), 16);
    }

    #[test]
    fn progress_and_design_files() {
        let mut buf = Vec::new();
        write_progress(&mut buf, &[-1.5, -2.0]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "round,log_reduction\n1,-1.5\n2,-2\n");
        let design = Design { x: vec![vec![0.5]], z: vec![1.25], c: vec![0] };
        let mut buf = Vec::new();
        write_design(&mut buf, &design).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,z,c\n0.5,1.25,0\n");
    }
}
