//! Ratings matrices and held-out NMAE evaluation.
//!
//! Input is CSV `user,item,rating`, optionally with a header row. Users and
//! items are numbered in order of first appearance.

use std::collections::HashMap;
use std::path::Path;

use log::info;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::matrix_io::read_text;
use crate::error::{Error, Result};
use crate::operators::{EntryMask, MeasurementMap, MeasurementVector};
use crate::problems::nmae;
use crate::solvers::{solve, SolverConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Ratings {
    pub users: Vec<String>,
    pub items: Vec<String>,
    /// `(user, item, rating)` in file order.
    pub entries: Vec<(usize, usize, f64)>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn intern(ids: &mut Vec<String>, index: &mut HashMap<String, usize>, key: &str) -> usize {
    if let Some(&k) = index.get(key) {
        return k;
    }
    ids.push(key.to_string());
    index.insert(key.to_string(), ids.len() - 1);
    ids.len() - 1
}

impl Ratings {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut user_index = HashMap::new();
        let mut item_index = HashMap::new();
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        let mut entries = Vec::new();
        let mut first = true;
        for (k, raw) in text.lines().enumerate() {
            let lno = k + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(parse_error(path, lno, "expected \"user,item,rating\""));
            }
            let rating = match fields[2].parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                Ok(_) => return Err(parse_error(path, lno, "non-finite rating")),
                Err(_) if first => {
                    first = false;
                    continue;
                }
                Err(_) => return Err(parse_error(path, lno, format!("invalid rating {:?}", fields[2]))),
            };
            first = false;
            let u = intern(&mut users, &mut user_index, fields[0]);
            let i = intern(&mut items, &mut item_index, fields[1]);
            if let Some(prev) = seen.insert((u, i), lno) {
                return Err(parse_error(
                    path,
                    lno,
                    format!("user {:?} rated item {:?} again (first on line {prev})", fields[0], fields[1]),
                ));
            }
            entries.push((u, i, rating));
        }
        if entries.is_empty() {
            return Err(parse_error(path, 1, "no ratings"));
        }
        Ok(Ratings { users, items, entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ratings::parse(&read_text(path)?, path)
    }
}

/// Ratings split into a training set and per-user withheld pairs.
#[derive(Clone, Debug)]
pub struct Holdout {
    pub train: Vec<(usize, usize, f64)>,
    /// `(user, [(item, rating); 2])`.
    pub withheld: Vec<(usize, [(usize, f64); 2])>,
    /// Users with fewer than three ratings.
    pub excluded: Vec<usize>,
}

/// Withholds two ratings, chosen uniformly, from every user with at least
/// three.
pub fn holdout(ratings: &Ratings, seed: u64) -> Holdout {
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); ratings.users.len()];
    for (k, &(u, _, _)) in ratings.entries.iter().enumerate() {
        by_user[u].push(k);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut held = vec![false; ratings.entries.len()];
    let mut withheld = Vec::new();
    let mut excluded = Vec::new();
    for (u, list) in by_user.iter().enumerate() {
        if list.len() < 3 {
            excluded.push(u);
            continue;
        }
        let picks = sample(&mut rng, list.len(), 2);
        let pair = [0, 1].map(|t| {
            let k = list[picks.index(t)];
            held[k] = true;
            (ratings.entries[k].1, ratings.entries[k].2)
        });
        withheld.push((u, pair));
    }
    let train = ratings
        .entries
        .iter()
        .zip(&held)
        .filter(|(_, &h)| !h)
        .map(|(&e, _)| e)
        .collect();
    Holdout {
        train,
        withheld,
        excluded,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NmaeReport {
    pub nmae: f64,
    pub mae: f64,
    pub users_evaluated: usize,
    pub users_excluded: usize,
    pub train_ratings: usize,
    pub rows: usize,
    pub cols: usize,
    pub final_rank: usize,
    pub solve_seconds: f64,
}

/// Completes the training matrix and scores predictions, clamped to
/// `[r_min, r_max]`, on the withheld ratings.
pub fn eval_nmae(
    ratings: &Ratings,
    seed: u64,
    r_min: f64,
    r_max: f64,
    config: &SolverConfig,
) -> Result<NmaeReport> {
    if !(r_max > r_min) {
        return Err(Error::invalid("rating range must satisfy r_max > r_min"));
    }
    if let Some(&(_, _, v)) = ratings.entries.iter().find(|e| !(r_min..=r_max).contains(&e.2)) {
        return Err(Error::invalid(format!("rating {v} outside [{r_min}, {r_max}]")));
    }
    let split = holdout(ratings, seed);
    for &u in &split.excluded {
        info!("user {:?} has fewer than 3 ratings; excluded from holdout", ratings.users[u]);
    }
    if split.withheld.is_empty() {
        return Err(Error::invalid("no user has at least 3 ratings"));
    }
    let (rows, cols) = (ratings.users.len(), ratings.items.len());
    let omega = split.train.iter().map(|&(u, i, _)| (u, i)).collect();
    let values = split.train.iter().map(|&(_, _, v)| v).collect();
    let mask = EntryMask::new(rows, cols, omega)?;
    let b = MeasurementVector::new(values)?;
    let report = solve(&MeasurementMap::from(mask), &b, config)?;

    let predict = |u: usize, i: usize| report.x_opt.get(u, i).clamp(r_min, r_max);
    let mut predicted = Vec::with_capacity(split.withheld.len());
    let mut actual = Vec::with_capacity(split.withheld.len());
    for &(u, [(i1, v1), (i2, v2)]) in &split.withheld {
        predicted.push((predict(u, i1), predict(u, i2)));
        actual.push((v1, v2));
    }
    let value = nmae(&predicted, &actual, r_min, r_max)?;
    Ok(NmaeReport {
        nmae: value,
        mae: value * (r_max - r_min),
        users_evaluated: split.withheld.len(),
        users_excluded: split.excluded.len(),
        train_ratings: split.train.len(),
        rows,
        cols,
        final_rank: report.final_rank,
        solve_seconds: report.elapsed_seconds,
    })
}
