use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Dataset, NodeData};

/// Genre flags in `u.item` after dropping the leading "unknown" column.
pub const GENRE_FEATURES: usize = 18;

/// One `u.data` record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub score: u32,
    pub timestamp: u64,
}

impl Rating {
    /// Scores up to 3 count as dislikes, 4 and 5 as likes.
    pub fn binary(&self) -> f64 {
        if self.score >= 4 {
            1.0
        } else {
            0.0
        }
    }
}

/// A train/test pair with one test rating per training rating.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Parses whitespace-separated `user item rating timestamp` lines. Blank
/// lines are skipped.
pub fn parse_ratings(text: &str) -> Result<Vec<Rating>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: line_no,
            msg: format!("bad {what} field"),
        };
        let rating = Rating {
            user: fields[0].parse().map_err(|_| bad("user"))?,
            item: fields[1].parse().map_err(|_| bad("item"))?,
            score: fields[2].parse().map_err(|_| bad("rating"))?,
            timestamp: fields[3].parse().map_err(|_| bad("timestamp"))?,
        };
        if rating.score > 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("rating {} outside 0..=5", rating.score),
            });
        }
        out.push(rating);
    }
    Ok(out)
}

/// Parses `u.item` into per-film genre vectors, dropping the "unknown" flag.
pub fn parse_item_genres(text: &str) -> Result<BTreeMap<u32, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        let err = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        if fields.len() < GENRE_FEATURES + 2 {
            return Err(err("too few fields for an item record"));
        }
        let id: u32 = fields[0].trim().parse().map_err(|_| err("bad item id"))?;
        let flags = &fields[fields.len() - GENRE_FEATURES..];
        let genres = flags
            .iter()
            .map(|f| match f.trim() {
                "0" => Ok(0.0),
                "1" => Ok(1.0),
                _ => Err(err("genre flags must be 0 or 1")),
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(id, genres);
    }
    Ok(out)
}

/// Reads a `u.data` file and splits it with [`split_ratings`], using seeded
/// standard-normal film features.
pub fn load_movielens_ratings<R: Rng + ?Sized>(
    path: &Path,
    users: usize,
    films_per_user: usize,
    rng: &mut R,
) -> Result<SplitData> {
    let ratings = parse_ratings(&fs::read_to_string(path)?)?;
    split_ratings(&ratings, None, users, films_per_user, GENRE_FEATURES, rng)
}

/// Picks `users` users with at least `2 * films_per_user` ratings, then for
/// each draws that many distinct ratings: the first half trains, the second
/// half is held out.
///
/// Film features come from `genres` when given (which fixes the width at
/// 18), otherwise from one standard-normal vector per film.
pub fn split_ratings<R: Rng + ?Sized>(
    ratings: &[Rating],
    genres: Option<&BTreeMap<u32, Vec<f64>>>,
    users: usize,
    films_per_user: usize,
    feature_dim: usize,
    rng: &mut R,
) -> Result<SplitData> {
    if users == 0 || films_per_user == 0 || feature_dim == 0 {
        return Err(Error::InvalidValue("sizes must be positive".into()));
    }
    if genres.is_some() && feature_dim != GENRE_FEATURES {
        return Err(Error::InvalidValue(format!(
            "genre features have width {GENRE_FEATURES}, not {feature_dim}"
        )));
    }
    let mut by_user: BTreeMap<u32, Vec<Rating>> = BTreeMap::new();
    for r in ratings {
        by_user.entry(r.user).or_default().push(*r);
    }
    let mut eligible: Vec<u32> = by_user
        .iter()
        .filter(|(_, v)| v.len() >= 2 * films_per_user)
        .map(|(u, _)| *u)
        .collect();
    if eligible.len() < users {
        return Err(Error::Data(format!(
            "{} users have at least {} ratings, {users} needed",
            eligible.len(),
            2 * films_per_user
        )));
    }
    eligible.shuffle(rng);
    let mut chosen = eligible[..users].to_vec();
    chosen.sort_unstable();

    let mut picks = Vec::with_capacity(users);
    for u in &chosen {
        let mut rs = by_user[u].clone();
        rs.sort_by_key(|r| r.item);
        let (sel, _) = rs.partial_shuffle(rng, 2 * films_per_user);
        picks.push(sel.to_vec());
    }

    let mut features: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut items: Vec<u32> = picks.iter().flatten().map(|r| r.item).collect();
    items.sort_unstable();
    items.dedup();
    for item in items {
        let x = match genres {
            Some(g) => g
                .get(&item)
                .cloned()
                .ok_or_else(|| Error::Data(format!("item {item} has no genre record")))?,
            None => (0..feature_dim).map(|_| rng.sample(StandardNormal)).collect(),
        };
        features.insert(item, x);
    }

    let half = |range: std::ops::Range<usize>| {
        let mut values = Vec::with_capacity(users * films_per_user);
        let mut cov = Vec::with_capacity(users * films_per_user * feature_dim);
        for sel in &picks {
            for r in &sel[range.clone()] {
                values.push(r.binary());
                cov.extend_from_slice(&features[&r.item]);
            }
        }
        Dataset::new(vec![NodeData::new(values, vec![cov])])
    };
    Ok(SplitData {
        train: half(0..films_per_user),
        test: half(films_per_user..2 * films_per_user),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarizes_at_four() {
        let r = parse_ratings("1\t242\t3\t88125\n1\t243\t4\t88125\n").unwrap();
        assert_eq!(r[0].binary(), 0.0);
        assert_eq!(r[1].binary(), 1.0);
    }

    #[test]
    fn truncated_line_names_line() {
        match parse_ratings("1\t242\t3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
