//! Textual grammar for estimands and options:
//! `acl`, `slate:1,3`, `slatt:1,2`, `slatu:1`, `pte:1@z2=1,z3=0`;
//! `--regularize auto|none|alpha=0.5`; `--se sandwich|bootstrap:500|none`;
//! `--discretize col:cut1,cut2[:desc]`.

use crate::error::{Error, Result};
use crate::estimation::{EstimandKind, Regularization, VarianceMethod};
use crate::sets::InstrumentSet;

use super::DiscretizeRule;

fn parse_index_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidEstimand(format!("bad {what} index `{tok}`")))
        })
        .collect()
}

/// Parse one estimand expression against `j` instruments.
pub fn parse_estimand(text: &str, j: usize) -> Result<EstimandKind> {
    let text = text.trim();
    if text.eq_ignore_ascii_case("acl") {
        return Ok(EstimandKind::Acl);
    }
    let (head, rest) = text
        .split_once(':')
        .ok_or_else(|| Error::InvalidEstimand(format!("unrecognized estimand `{text}`")))?;
    let kind = match head.to_ascii_lowercase().as_str() {
        "slate" | "slatt" | "slatu" => {
            let set = InstrumentSet::from_indices(&parse_index_list(rest, "instrument")?)?;
            match head.to_ascii_lowercase().as_str() {
                "slate" => EstimandKind::Slate(set),
                "slatt" => EstimandKind::Slatt(set),
                _ => EstimandKind::Slatu(set),
            }
        }
        "pte" => {
            let (instr, ctx) = rest.split_once('@').ok_or_else(|| {
                Error::InvalidEstimand(
                    "pte needs a full context, e.g. pte:1@z2=1,z3=0".into(),
                )
            })?;
            let instrument: usize = instr
                .trim()
                .parse()
                .map_err(|_| Error::InvalidEstimand(format!("bad instrument `{instr}`")))?;
            let mut assigned = vec![None::<bool>; j + 1];
            for tok in ctx.split(',') {
                let tok = tok.trim();
                let (name, value) = tok
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidEstimand(format!("bad context term `{tok}`")))?;
                let idx: usize = name
                    .trim()
                    .strip_prefix('z')
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::InvalidEstimand(format!("bad context name `{name}`")))?;
                if idx < 1 || idx > j {
                    return Err(Error::InstrumentIndexOutOfRange(idx, j));
                }
                if idx == instrument {
                    return Err(Error::InvalidEstimand(format!(
                        "context assigns the switched instrument z{idx}"
                    )));
                }
                let v = match value.trim() {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(Error::InvalidEstimand(format!("bad context value `{other}`")))
                    }
                };
                if assigned[idx].is_some() {
                    return Err(Error::InvalidEstimand(format!("z{idx} assigned twice")));
                }
                assigned[idx] = Some(v);
            }
            let missing: Vec<usize> =
                (1..=j).filter(|&i| i != instrument && assigned[i].is_none()).collect();
            if !missing.is_empty() {
                return Err(Error::InvalidEstimand(format!(
                    "pte context leaves instruments {missing:?} unset; a full assignment is required"
                )));
            }
            let ones: Vec<usize> =
                (1..=j).filter(|&i| assigned[i] == Some(true)).collect();
            EstimandKind::Pte { instrument, context: InstrumentSet::from_indices(&ones)? }
        }
        other => return Err(Error::InvalidEstimand(format!("unrecognized estimand `{other}`"))),
    };
    kind.validate(j)?;
    Ok(kind)
}

pub fn parse_regularization(text: &str) -> Result<Regularization> {
    match text.trim().to_ascii_lowercase().as_str() {
        "auto" => Ok(Regularization::AutoMse),
        "none" => Ok(Regularization::None),
        other => {
            if let Some(v) = other.strip_prefix("alpha=") {
                let a: f64 = v
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad penalty `{v}`")))?;
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::InvalidConfig(format!("penalty {a} must be >= 0")));
                }
                Ok(Regularization::Fixed(a))
            } else {
                Err(Error::InvalidConfig(format!("unrecognized regularization `{other}`")))
            }
        }
    }
}

pub fn parse_variance(text: &str, seed: u64) -> Result<VarianceMethod> {
    match text.trim().to_ascii_lowercase().as_str() {
        "sandwich" => Ok(VarianceMethod::Sandwich),
        "none" => Ok(VarianceMethod::None),
        other => {
            if let Some(v) = other.strip_prefix("bootstrap:") {
                let b: usize = v
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad bootstrap count `{v}`")))?;
                Ok(VarianceMethod::Bootstrap { replications: b, seed })
            } else {
                Err(Error::InvalidConfig(format!("unrecognized variance method `{other}`")))
            }
        }
    }
}

/// `col:cut1,cut2[,...][:desc]`
pub fn parse_discretize(text: &str) -> Result<DiscretizeRule> {
    let mut parts = text.splitn(3, ':');
    let column = parts
        .next()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::InvalidConfig(format!("bad discretize rule `{text}`")))?
        .to_string();
    let cuts_text = parts
        .next()
        .ok_or_else(|| Error::InvalidConfig(format!("discretize rule `{text}` has no cuts")))?;
    let cuts: Vec<f64> = cuts_text
        .split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad cut `{c}` in `{text}`")))
        })
        .collect::<Result<_>>()?;
    let ascending = match parts.next() {
        None => true,
        Some("desc") => false,
        Some("asc") => true,
        Some(other) => {
            return Err(Error::InvalidConfig(format!("bad direction `{other}` in `{text}`")))
        }
    };
    Ok(DiscretizeRule { column, cuts, ascending })
}
