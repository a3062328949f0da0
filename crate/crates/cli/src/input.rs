//! Reading observed laws (table JSON) and record sets (CSV).
//!
//! Record CSV: a header naming `x` / `w` (one indicator) or `x1..xn` /
//! `w1..wn`, plus optional covariate columns `c`, `c<digits>` or `c_<name>`.
//! Several covariate columns are crossed into one C axis in mixed radix, the
//! first covariate column varying slowest.
//!
//! Table JSON: `{"axes": [{"name": "X1", "card": 3}, ...], "probs": [...]}`
//! with row-major probabilities (last axis fastest), axis names `X<k>`,
//! `W<k>` and `C` (`X`, `W` alone mean indicator 1). The shorthand
//! `{"wx": [[p(w0,x0), p(w0,x1), ...], [p(w1,x0), ...]]}` covers the
//! single-indicator law without covariates.

use std::io::Read;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use zinfer::simulate::RecordSet;
use zinfer::{Axis, ObservedLaw, ProbTable, Role};

pub enum Data {
    Table(ObservedLaw),
    Records(RecordSet),
}

pub struct Loaded {
    pub data: Data,
    /// Label per C level, after pooling.
    pub strata: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisSpec {
    name: String,
    card: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableSpec {
    #[serde(default)]
    axes: Vec<AxisSpec>,
    #[serde(default)]
    probs: Vec<f64>,
    wx: Option<[Vec<f64>; 2]>,
}

fn read_source(path: &Path) -> Result<String> {
    let mut text = String::new();
    if path.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut text).context("reading standard input")?;
    } else {
        text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    }
    Ok(text)
}

/// Loads a table or record file; the format is taken from the content.
pub fn load(path: &Path, min_cell_count: usize) -> Result<Loaded> {
    let text = read_source(path)?;
    if text.trim_start().starts_with('{') {
        let law = parse_table(&text)?;
        let strata = (0..law.c_card()).map(|c| format!("C={c}")).collect();
        Ok(Loaded { data: Data::Table(law), strata, warnings: vec![] })
    } else {
        parse_records(&text, min_cell_count)
    }
}

fn axis_role(name: &str) -> Result<Role> {
    let index = |rest: &str| -> Result<usize> {
        if rest.is_empty() {
            return Ok(0);
        }
        let k: usize = rest.parse().map_err(|_| anyhow!("bad axis name `{name}`"))?;
        if k == 0 {
            bail!("axis indices start at 1 (`{name}`)");
        }
        Ok(k - 1)
    };
    let upper = name.to_ascii_uppercase();
    match upper.split_at(1) {
        ("X", rest) => Ok(Role::X(index(rest)?)),
        ("W", rest) => Ok(Role::W(index(rest)?)),
        ("C", "") => Ok(Role::C),
        _ => bail!("unknown axis `{name}` (expected X<k>, W<k> or C)"),
    }
}

pub fn parse_table(text: &str) -> Result<ObservedLaw> {
    let spec: TableSpec = serde_json::from_str(text).context("parsing table JSON")?;
    let law = if let Some([w0, w1]) = spec.wx {
        if !spec.axes.is_empty() || !spec.probs.is_empty() {
            bail!("give either `wx` or `axes` and `probs`, not both");
        }
        ObservedLaw::from_wx([&w0, &w1])?
    } else {
        if spec.axes.is_empty() {
            bail!("table JSON needs `axes` and `probs` (or the `wx` shorthand)");
        }
        let axes = spec
            .axes
            .iter()
            .map(|a| Ok(Axis::named(a.name.clone(), axis_role(&a.name)?, a.card)))
            .collect::<Result<Vec<_>>>()?;
        ObservedLaw::new(ProbTable::joint(axes, spec.probs)?)?
    };
    Ok(law)
}

#[derive(Clone, Copy, PartialEq)]
enum Column {
    X(usize),
    W(usize),
    Covariate,
}

fn classify(header: &str) -> Result<Column> {
    let h = header.trim().to_ascii_lowercase();
    let idx = |rest: &str| -> Option<usize> {
        if rest.is_empty() {
            Some(0)
        } else {
            rest.parse::<usize>().ok().filter(|&k| k > 0).map(|k| k - 1)
        }
    };
    if let Some(k) = h.strip_prefix('x').and_then(idx) {
        return Ok(Column::X(k));
    }
    if let Some(k) = h.strip_prefix('w').and_then(idx) {
        return Ok(Column::W(k));
    }
    if h == "c" || h.starts_with("c_") || h.strip_prefix('c').is_some_and(|r| r.parse::<usize>().is_ok()) {
        return Ok(Column::Covariate);
    }
    bail!("unrecognized column `{header}` (expected x, w, c, x<k>, w<k>, c<k> or c_<name>)")
}

pub fn parse_records(text: &str, min_cell_count: usize) -> Result<Loaded> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers().context("reading CSV header")?.iter().map(str::to_string).collect();
    let cols = headers.iter().map(|h| classify(h)).collect::<Result<Vec<_>>>()?;
    let n = cols.iter().filter(|c| matches!(c, Column::X(_))).count();
    if n == 0 {
        bail!("CSV header has no x column");
    }
    let pos = |want: Column| cols.iter().position(|&c| c == want);
    let mut x_at = vec![];
    let mut w_at = vec![];
    for k in 0..n {
        x_at.push(pos(Column::X(k)).ok_or_else(|| anyhow!("missing column x{}", k + 1))?);
        w_at.push(pos(Column::W(k)).ok_or_else(|| anyhow!("missing column w{}", k + 1))?);
    }
    if cols.iter().filter(|c| matches!(c, Column::W(_))).count() != n {
        bail!("CSV header needs one w column per x column");
    }
    let c_at: Vec<usize> = (0..cols.len()).filter(|&i| cols[i] == Column::Covariate).collect();

    let mut rows: Vec<Vec<usize>> = vec![];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("CSV record {}", line + 1))?;
        if rec.len() != headers.len() {
            bail!("CSV record {} has {} fields, header has {}", line + 1, rec.len(), headers.len());
        }
        let row = rec
            .iter()
            .map(|v| v.parse::<usize>().map_err(|_| anyhow!("CSV record {}: `{v}` is not a nonnegative integer", line + 1)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("CSV has no records");
    }

    let card = |i: usize| rows.iter().map(|r| r[i]).max().unwrap_or(0) + 1;
    let x_cards: Vec<usize> = x_at.iter().map(|&i| card(i).max(2)).collect();
    let c_cards: Vec<usize> = c_at.iter().map(|&i| card(i)).collect();
    let raw_c = |r: &[usize]| c_at.iter().zip(&c_cards).fold(0, |acc, (&i, &k)| acc * k + r[i]);
    let raw_card: usize = c_cards.iter().product();
    let raw_label = |mut c: usize| -> String {
        if c_at.is_empty() {
            return "all".into();
        }
        let mut parts = vec![];
        for (&i, &k) in c_at.iter().zip(&c_cards).rev() {
            parts.push(format!("{}={}", headers[i].trim(), c % k));
            c /= k;
        }
        parts.reverse();
        parts.join(",")
    };

    // pool sparse strata
    let mut counts = vec![0usize; raw_card];
    for r in &rows {
        counts[raw_c(r)] += 1;
    }
    let mut warnings = vec![];
    let keep: Vec<usize> = (0..raw_card).filter(|&c| counts[c] >= min_cell_count.max(1)).collect();
    let sparse: Vec<usize> = (0..raw_card).filter(|&c| counts[c] > 0 && counts[c] < min_cell_count).collect();
    let empty: Vec<usize> = (0..raw_card).filter(|&c| counts[c] == 0).collect();
    let mut map = vec![usize::MAX; raw_card];
    let mut strata = vec![];
    for (new, &c) in keep.iter().enumerate() {
        map[c] = new;
        strata.push(raw_label(c));
    }
    if !sparse.is_empty() {
        let labels: Vec<String> = sparse.iter().map(|&c| raw_label(c)).collect();
        for &c in &sparse {
            map[c] = strata.len();
        }
        warnings.push(format!(
            "pooled {} strata with fewer than {min_cell_count} records into one stratum: {}",
            sparse.len(),
            labels.join("; ")
        ));
        strata.push(format!("pooled({})", labels.join("; ")));
    }
    if !empty.is_empty() && !c_at.is_empty() {
        let labels: Vec<String> = empty.iter().map(|&c| raw_label(c)).collect();
        warnings.push(format!("dropped {} covariate levels with no records: {}", empty.len(), labels.join("; ")));
    }

    let mut set = RecordSet::new(x_cards, strata.len());
    let mut buf = vec![0; 2 * n + 1];
    for r in &rows {
        for k in 0..n {
            buf[k] = r[x_at[k]];
            buf[n + k] = r[w_at[k]];
        }
        buf[2 * n] = map[raw_c(r)];
        set.push(&buf)?;
    }
    Ok(Loaded { data: Data::Records(set), strata, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariate_columns_cross_and_pool() {
        let mut text = String::from("x,w,c_a,c_b\n");
        for _ in 0..6 {
            text.push_str("1,0,0,0\n0,1,1,1\n");
        }
        text.push_str("0,0,0,1\n");
        let loaded = parse_records(&text, 5).unwrap();
        assert_eq!(loaded.strata, vec!["c_a=0,c_b=0", "c_a=1,c_b=1", "pooled(c_a=0,c_b=1)"]);
        assert_eq!(loaded.warnings.len(), 2);
        let Data::Records(set) = loaded.data else { panic!() };
        assert_eq!(set.c_card(), 3);
        assert_eq!(set.row(12), &[0, 0, 2]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(parse_records("x,w\n1,2\n", 0).is_err());
        assert!(parse_records("x,w\n1,a\n", 0).is_err());
        assert!(parse_records("x,w,id\n1,0,3\n", 0).is_err());
        assert!(parse_table(r#"{"axes":[{"name":"Q","card":2}],"probs":[0.5,0.5]}"#).is_err());
    }
}
