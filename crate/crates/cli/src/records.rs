//! Record, dating-table and age-ensemble files.
//!
//! Records are CSV with a header naming some of `depth`, `age` and `value`
//! (`value` plus at least one axis). Lines starting with `#` carry metadata
//! as `# key: value`. Ages are years BP, increasing downcore.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::Path;

use paleocorr::chronology::{load_dating_table, AgeEnsemble, RadiocarbonDate};
use paleocorr::Error;

use crate::error::{io_err, CliResult, Context};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordFile {
    pub name: Option<String>,
    pub units: Option<String>,
    pub depth: Option<Vec<f64>>,
    pub age: Option<Vec<f64>>,
    pub value: Vec<f64>,
}

impl RecordFile {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(n) = &self.name {
            writeln!(out, "# name: {n}").unwrap();
        }
        if let Some(u) = &self.units {
            writeln!(out, "# units: {u}").unwrap();
        }
        let mut cols = Vec::new();
        if self.depth.is_some() {
            cols.push("depth");
        }
        if self.age.is_some() {
            cols.push("age");
        }
        cols.push("value");
        out.push_str(&cols.join(","));
        out.push('\n');
        for i in 0..self.len() {
            let mut fields = Vec::with_capacity(3);
            if let Some(d) = &self.depth {
                fields.push(d[i].to_string());
            }
            if let Some(a) = &self.age {
                fields.push(a[i].to_string());
            }
            fields.push(self.value[i].to_string());
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn parse_record(text: &str) -> paleocorr::Result<RecordFile> {
    let mut rec = RecordFile::default();
    let mut columns: Option<Vec<Option<usize>>> = None;
    let (mut depth, mut age) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.split_once(':') {
                match k.trim() {
                    "name" => rec.name = Some(v.trim().to_string()),
                    "units" => rec.units = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(cols) = &columns else {
            // Slots: depth, age, value.
            let find = |name: &str| fields.iter().position(|f| f.eq_ignore_ascii_case(name));
            let slots = vec![find("depth"), find("age"), find("value")];
            if slots[2].is_none() || (slots[0].is_none() && slots[1].is_none()) {
                return Err(Error::Parse {
                    line: lineno,
                    message: "header needs a value column and a depth or age column".into(),
                });
            }
            columns = Some(slots);
            continue;
        };
        let get = |slot: Option<usize>| -> paleocorr::Result<Option<f64>> {
            let Some(j) = slot else { return Ok(None) };
            let raw = fields.get(j).ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("expected at least {} fields", j + 1),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("not a number: {raw:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-finite value {raw:?}"),
                });
            }
            Ok(Some(v))
        };
        if let Some(d) = get(cols[0])? {
            depth.push(d);
        }
        if let Some(a) = get(cols[1])? {
            age.push(a);
        }
        rec.value.push(get(cols[2])?.expect("value column is present"));
    }
    let cols = columns.ok_or(Error::Parse {
        line: 0,
        message: "missing header".into(),
    })?;
    if rec.value.is_empty() {
        return Err(Error::EmptyOutput("record has no rows".into()));
    }
    let key = if cols[1].is_some() { &age } else { &depth };
    let mut order: Vec<usize> = (0..rec.value.len()).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]));
    let permute = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    rec.depth = cols[0].map(|_| permute(&depth));
    rec.age = cols[1].map(|_| permute(&age));
    rec.value = permute(&rec.value);
    Ok(rec)
}

pub fn read_record(path: &Path) -> CliResult<RecordFile> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_record(&text).context(|| path.display().to_string())
}

pub fn read_dates(path: &Path) -> CliResult<Vec<RadiocarbonDate>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    load_dating_table(BufReader::new(file)).context(|| path.display().to_string())
}

pub fn write(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// `depth,median,r1,...` with one row per depth; `limit` caps the number of
/// realization columns.
pub fn ensemble_csv(ens: &AgeEnsemble, limit: usize) -> String {
    let k = ens.n_realizations().min(limit);
    let mut out = String::from("depth,median");
    for r in 1..=k {
        write!(out, ",r{r}").unwrap();
    }
    out.push('\n');
    for (j, d) in ens.depths.iter().enumerate() {
        write!(out, "{d},{}", ens.median_ages[j]).unwrap();
        for r in &ens.realizations[..k] {
            write!(out, ",{}", r[j]).unwrap();
        }
        out.push('\n');
    }
    out
}
