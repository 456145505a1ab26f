use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, NodeData};

use super::movielens::SplitData;

pub const BUS_HEADER: [&str; 6] = ["year", "borough", "id", "company-index", "journey-index", "delay"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BusRecord {
    pub year: i64,
    pub borough: i64,
    pub id: i64,
    pub company: usize,
    pub journey: usize,
    pub delay: u64,
}

/// Parses the bus CSV. The first non-blank line must be the header.
pub fn parse_bus_csv(text: &str) -> Result<Vec<BusRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(BUS_HEADER) => {}
        Some((i, _)) => {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected header `{}`", BUS_HEADER.join(",")),
            })
        }
        None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        let int = |j: usize| f[j].parse::<i64>().map_err(|_| err(format!("bad `{}` field", BUS_HEADER[j])));
        let (company, journey, delay) = (int(3)?, int(4)?, int(5)?);
        if company < 0 || journey < 0 || delay < 0 {
            return Err(err("indices and delays must be non-negative".into()));
        }
        out.push(BusRecord {
            year: int(0)?,
            borough: int(1)?,
            id: int(2)?,
            company: company as usize,
            journey: journey as usize,
            delay: delay as u64,
        });
    }
    Ok(out)
}

pub fn load_bus_csv(
    path: &Path,
    years: usize,
    boroughs: usize,
    ids: usize,
    companies: usize,
    journeys: usize,
) -> Result<SplitData> {
    let records = parse_bus_csv(&fs::read_to_string(path)?)?;
    split_bus(&records, years, boroughs, ids, companies, journeys)
}

/// Takes the first `years` years, the first `boroughs` boroughs of each and
/// the first `ids` route ids of each borough that have at least two records.
/// An id's first record trains and its second is held out. Covariates are
/// one-hot.
pub fn split_bus(
    records: &[BusRecord],
    years: usize,
    boroughs: usize,
    ids: usize,
    companies: usize,
    journeys: usize,
) -> Result<SplitData> {
    if years == 0 || boroughs == 0 || ids == 0 || companies == 0 || journeys == 0 {
        return Err(Error::InvalidValue("sizes must be positive".into()));
    }
    type Tree = BTreeMap<i64, BTreeMap<i64, BTreeMap<i64, Vec<BusRecord>>>>;
    let mut tree: Tree = BTreeMap::new();
    for r in records {
        if r.company >= companies || r.journey >= journeys {
            return Err(Error::Data(format!(
                "record for id {} has company {} / journey {} outside {companies} / {journeys}",
                r.id, r.company, r.journey
            )));
        }
        tree.entry(r.year)
            .or_default()
            .entry(r.borough)
            .or_default()
            .entry(r.id)
            .or_default()
            .push(*r);
    }
    if tree.len() < years {
        return Err(Error::Data(format!("{} years in the file, {years} needed", tree.len())));
    }
    let mut pairs = Vec::with_capacity(years * boroughs * ids);
    for (year, bs) in tree.iter().take(years) {
        if bs.len() < boroughs {
            return Err(Error::Data(format!(
                "year {year} has {} boroughs, {boroughs} needed",
                bs.len()
            )));
        }
        for (borough, routes) in bs.iter().take(boroughs) {
            let usable: Vec<&Vec<BusRecord>> = routes.values().filter(|v| v.len() >= 2).take(ids).collect();
            if usable.len() < ids {
                return Err(Error::Data(format!(
                    "year {year}, borough {borough}: {} ids with two records, {ids} needed",
                    usable.len()
                )));
            }
            pairs.extend(usable.into_iter().map(|v| (v[0], v[1])));
        }
    }
    let half = |second: bool| {
        let n = pairs.len();
        let (mut delay, mut co, mut jo) = (Vec::with_capacity(n), vec![0.0; n * companies], vec![0.0; n * journeys]);
        for (m, (a, b)) in pairs.iter().enumerate() {
            let r = if second { b } else { a };
            delay.push(r.delay as f64);
            co[m * companies + r.company] = 1.0;
            jo[m * journeys + r.journey] = 1.0;
        }
        Dataset::new(vec![NodeData::new(delay, vec![co, jo])])
    };
    Ok(SplitData {
        train: half(false),
        test: half(true),
    })
}
