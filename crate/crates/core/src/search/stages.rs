use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{
    ActiveVariable, Estimate, EstimateLog, FitCounter, JointEntry, LatentDimRule, Origin, ParentTable,
    SearchConfig, SearchError,
};
use crate::basis::{fit_basis, sweep_latent_dim, BasisConfig, EncoderInput};
use crate::eval::{independence_score, kernel_r2, PredictionMatrix};
use crate::par::map_indexed;
use crate::stats::{derive_seed, hstack};

pub struct StageOne {
    pub table: ParentTable,
    pub logs: Vec<EstimateLog>,
    pub skipped: Vec<(String, String)>,
}

fn concat(n: usize, parts: &[ArrayView2<f64>]) -> Array2<f64> {
    hstack(n, parts)
}

/// Shared-latent and private widths for a fit with first view width `d_v1`.
fn latent_dims(
    rule: LatentDimRule,
    exogenous: usize,
    d_v1: usize,
    d_v2: usize,
) -> Result<(usize, usize, usize), String> {
    match rule {
        LatentDimRule::ExogenousResidual | LatentDimRule::Sweep { .. } => {
            if d_v1 <= exogenous {
                Err(format!("width {d_v1} leaves no room for a parent beyond {exogenous} private dims"))
            } else {
                let d_z = d_v1 - exogenous;
                Ok((d_z, exogenous, d_v2.saturating_sub(d_z)))
            }
        }
        LatentDimRule::Fixed { d_z } => {
            if d_z == 0 || d_z > d_v1 + d_v2 {
                Err(format!("fixed latent width {d_z} does not fit views {d_v1}+{d_v2}"))
            } else {
                Ok((d_z, d_v1.saturating_sub(d_z), d_v2.saturating_sub(d_z)))
            }
        }
    }
}

/// Stage 1: one two-view fit per active variable against all the others.
pub fn estimate_parents(
    active: &[ActiveVariable],
    cfg: &SearchConfig,
    iteration: usize,
    counter: &FitCounter,
) -> Result<StageOne, SearchError> {
    let mut out = StageOne {
        table: ParentTable::default(),
        logs: Vec::new(),
        skipped: Vec::new(),
    };
    if active.len() < 2 {
        return Ok(out);
    }
    let n = active[0].samples.nrows();
    let results = map_indexed(active.len(), |i| {
        let a = &active[i];
        let rest: Vec<ArrayView2<f64>> = active
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| b.samples.view())
            .collect();
        let v2 = concat(n, &rest);
        let (d_z, d_s1, d_s2) = latent_dims(cfg.latent_dims, cfg.exogenous_dim, a.dim(), v2.ncols())?;
        let mut basis = BasisConfig {
            encoder_input: cfg.parent_encoder,
            view_weights: (1.0, 1.0),
            seed: derive_seed(cfg.seed, &format!("parents/{iteration}/{}", a.id)),
            ..cfg.basis.clone()
        }
        .with_dims(a.dim(), v2.ncols(), d_z, d_s1, d_s2);
        let mut fits = 0;
        if let LatentDimRule::Sweep { max, tolerance } = cfg.latent_dims {
            let sweep = sweep_latent_dim(a.samples.view(), v2.view(), &basis, max.min(a.dim()), tolerance)
                .map_err(|e| e.to_string())?;
            fits += sweep.losses.len();
            basis.d_z = sweep.chosen;
            basis.d_s1 = a.dim().saturating_sub(sweep.chosen);
        }
        let fit = fit_basis(a.samples.view(), v2.view(), &basis).map_err(|e| e.to_string())?;
        fits += 1;
        Ok::<_, String>((fit.z_samples, fit.final_loss, basis.d_z, fits))
    });
    for (i, (a, res)) in active.iter().zip(results).enumerate() {
        match res {
            Ok((z, loss, d_z, fits)) => {
                counter.add_parent(fits);
                let id = format!("h{iteration}_{i}");
                out.logs.push(EstimateLog {
                    id: id.clone(),
                    source: a.id.clone(),
                    d_z,
                    final_loss: loss,
                });
                out.table.entries.insert(a.id.clone(), vec![id.clone()]);
                out.table.estimates.insert(
                    id.clone(),
                    Estimate {
                        id: id.clone(),
                        samples: z,
                        source: a.id.clone(),
                        members: vec![id],
                    },
                );
            }
            Err(msg) => out.skipped.push((a.id.clone(), msg)),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub representative: String,
    pub members: Vec<String>,
    /// Smallest directional score inside the class along the merging links.
    pub min_score: f64,
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = i;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Stage 2: collapse classes of mutually predicting estimates onto their
/// lowest id.
pub fn merge_duplicates(mut table: ParentTable, matrix: &PredictionMatrix, tau: f64) -> (ParentTable, Vec<MergeRecord>) {
    let ids: Vec<String> = table.estimates.keys().cloned().collect();
    let k = ids.len();
    let idx: Vec<Option<usize>> = ids.iter().map(|id| matrix.index_of(id)).collect();
    let mut parent: Vec<usize> = (0..k).collect();
    let mut link_min = vec![f64::INFINITY; k];
    let mut links = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let (Some(i), Some(j)) = (idx[a], idx[b]) else { continue };
            let (Some(ab), Some(ba)) = (matrix.value(i, j), matrix.value(j, i)) else { continue };
            if ab >= tau && ba >= tau {
                links.push((a, b, ab.min(ba)));
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    for (a, _, s) in &links {
        let r = find(&mut parent, *a);
        link_min[r] = link_min[r].min(*s);
    }
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..k {
        classes.entry(find(&mut parent, i)).or_default().push(i);
    }
    let mut records = Vec::new();
    for (root, members) in classes {
        if members.len() < 2 {
            continue;
        }
        // ids are sorted, so the first member is the lowest id
        let rep = ids[members[0]].clone();
        let names: Vec<String> = members.iter().map(|&m| ids[m].clone()).collect();
        for other in &names[1..] {
            table.estimates.remove(other);
            for ps in table.entries.values_mut() {
                for p in ps.iter_mut() {
                    if p == other {
                        *p = rep.clone();
                    }
                }
                ps.sort();
                ps.dedup();
            }
        }
        table.estimates.get_mut(&rep).expect("representative kept").members = names.clone();
        records.push(MergeRecord {
            representative: rep,
            members: names,
            min_score: link_min[root],
        });
    }
    (table, records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervariableAction {
    /// Replaced by the explaining subset.
    Split,
    /// No subset explains it and it was merged from one child only.
    Suppressed,
    /// No subset explains it but several children share it.
    Retained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervariableRecord {
    pub estimate: String,
    pub dominated: Vec<String>,
    pub action: SupervariableAction,
    pub subset: Vec<String>,
    pub score: Option<f64>,
}

fn joint_score(table: &ParentTable, subset: &[String], target: &str, cfg: &SearchConfig) -> Result<f64, SearchError> {
    let n = table.samples(target).nrows();
    let views: Vec<ArrayView2<f64>> = subset.iter().map(|s| table.samples(s)).collect();
    let x = concat(n, &views);
    Ok(kernel_r2(x.view(), table.samples(target), &cfg.r2)?.value)
}

fn combinations(pool: &[String], size: usize) -> Vec<Vec<String>> {
    fn rec(pool: &[String], size: usize, start: usize, cur: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..pool.len() {
            cur.push(pool[i].clone());
            rec(pool, size, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(pool, size, 0, &mut Vec::new(), &mut out);
    out
}

/// Smallest subset of `pool` whose concatenation predicts `target`,
/// exhaustively up to the configured size, greedily beyond it.
fn explaining_subset(
    table: &ParentTable,
    pool: &[String],
    target: &str,
    cfg: &SearchConfig,
) -> Result<Option<(Vec<String>, f64)>, SearchError> {
    let exhaustive = cfg.exhaustive_subset_max.min(pool.len());
    for size in 2..=exhaustive {
        let subsets = combinations(pool, size);
        let scores = map_indexed(subsets.len(), |i| joint_score(table, &subsets[i], target, cfg));
        let mut best: Option<(Vec<String>, f64)> = None;
        for (s, score) in subsets.into_iter().zip(scores) {
            let score = score?;
            if score >= cfg.tau && best.as_ref().is_none_or(|b| score > b.1) {
                best = Some((s, score));
            }
        }
        if best.is_some() {
            return Ok(best);
        }
    }
    if pool.len() <= exhaustive {
        return Ok(None);
    }
    // Forward selection over the remaining sizes.
    let mut chosen: Vec<String> = Vec::new();
    let mut remaining: Vec<String> = pool.to_vec();
    while !remaining.is_empty() {
        let trials: Vec<Vec<String>> = remaining
            .iter()
            .map(|r| {
                let mut t = chosen.clone();
                t.push(r.clone());
                t.sort();
                t
            })
            .collect();
        let scores = map_indexed(trials.len(), |i| joint_score(table, &trials[i], target, cfg));
        let mut best = (0, f64::NEG_INFINITY);
        for (i, s) in scores.into_iter().enumerate() {
            let s = s?;
            if s > best.1 {
                best = (i, s);
            }
        }
        chosen = trials[best.0].clone();
        remaining.remove(best.0);
        if chosen.len() > exhaustive && best.1 >= cfg.tau {
            return Ok(Some((chosen, best.1)));
        }
    }
    Ok(None)
}

/// Stage 3: estimates that predict others without being predicted back are
/// replaced by an explaining subset when one exists.
pub fn resolve_supervariables(
    mut table: ParentTable,
    matrix: &PredictionMatrix,
    cfg: &SearchConfig,
) -> Result<(ParentTable, Vec<SupervariableRecord>), SearchError> {
    let mut records = Vec::new();
    let ids: Vec<String> = table.estimates.keys().cloned().collect();
    for id in ids {
        if !table.estimates.contains_key(&id) {
            continue;
        }
        let Some(i) = matrix.index_of(&id) else { continue };
        let dominated: Vec<String> = table
            .estimates
            .keys()
            .filter(|o| **o != id)
            .filter(|o| {
                let j = matrix.index_of(o).expect("estimate in matrix");
                let fwd = matrix.value(i, j).unwrap_or(f64::NEG_INFINITY);
                let back = matrix.value(j, i).unwrap_or(f64::NEG_INFINITY);
                fwd >= cfg.tau && back < cfg.tau
            })
            .cloned()
            .collect();
        if dominated.is_empty() {
            continue;
        }
        let found = explaining_subset(&table, &dominated, &id, cfg)?;
        let record = match found {
            Some((subset, score)) => {
                table.estimates.remove(&id);
                for ps in table.entries.values_mut() {
                    if let Some(pos) = ps.iter().position(|p| *p == id) {
                        ps.remove(pos);
                        ps.extend(subset.iter().cloned());
                        ps.sort();
                        ps.dedup();
                    }
                }
                SupervariableRecord {
                    estimate: id,
                    dominated,
                    action: SupervariableAction::Split,
                    subset,
                    score: Some(score),
                }
            }
            None => {
                let shared = table.estimates[&id].members.len() >= 2;
                let action = if cfg.keep_shared_dominators && shared {
                    SupervariableAction::Retained
                } else {
                    table.suppressed.insert(id.clone());
                    SupervariableAction::Suppressed
                };
                SupervariableRecord {
                    estimate: id,
                    dominated,
                    action,
                    subset: Vec::new(),
                    score: None,
                }
            }
        };
        records.push(record);
    }
    Ok((table, records))
}

/// Groups estimates that share a child; each group carries the union of
/// its children.
pub fn cluster_spouses(table: &ParentTable) -> Vec<JointEntry> {
    let ids: Vec<String> = table.estimates.keys().cloned().collect();
    let pos: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    for ps in table.entries.values() {
        let members: Vec<usize> = ps.iter().filter_map(|p| pos.get(p.as_str()).copied()).collect();
        for w in members.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, (BTreeSet<String>, BTreeSet<String>)> = BTreeMap::new();
    for (child, ps) in &table.entries {
        for p in ps {
            if let Some(&i) = pos.get(p.as_str()) {
                let g = groups.entry(find(&mut parent, i)).or_default();
                g.0.insert(p.clone());
                g.1.insert(child.clone());
            }
        }
    }
    groups
        .into_values()
        .map(|(p, c)| JointEntry {
            parents: p.into_iter().collect(),
            children: c.into_iter().collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTest {
    pub parents: Vec<String>,
    pub children: Vec<String>,
    /// Active variables used as the second view.
    pub rest: Vec<String>,
    /// Score of the test code predicting each parent.
    pub scores: Vec<(String, f64)>,
    pub suppressed: bool,
    pub note: Option<String>,
}

/// Stage 4: a cluster whose parents can be recovered from the active
/// variables outside its children has a descendant among them and waits.
pub fn detect_directed_paths(
    table: &ParentTable,
    active: &[ActiveVariable],
    cfg: &SearchConfig,
    iteration: usize,
    counter: &FitCounter,
) -> Result<Vec<PathTest>, SearchError> {
    let entries: Vec<&JointEntry> = table
        .joint
        .iter()
        .filter(|e| !e.parents.iter().any(|p| table.suppressed.contains(p)))
        .collect();
    let n = active.first().map(|a| a.samples.nrows()).unwrap_or(0);
    let results = map_indexed(entries.len(), |k| {
        let entry = entries[k];
        let rest: Vec<&ActiveVariable> = active.iter().filter(|a| !entry.children.contains(&a.id)).collect();
        let mut test = PathTest {
            parents: entry.parents.clone(),
            children: entry.children.clone(),
            rest: rest.iter().map(|a| a.id.clone()).collect(),
            scores: Vec::new(),
            suppressed: false,
            note: None,
        };
        if rest.is_empty() {
            test.note = Some("no variables outside the children".into());
            return Ok((test, 0));
        }
        let v1 = concat(n, &entry.parents.iter().map(|p| table.samples(p)).collect::<Vec<_>>());
        let v2 = concat(n, &rest.iter().map(|a| a.samples.view()).collect::<Vec<_>>());
        let basis = BasisConfig {
            encoder_input: EncoderInput::SecondOnly,
            view_weights: (1.0, 0.0),
            seed: derive_seed(cfg.seed, &format!("paths/{iteration}/{}", entry.parents.join("+"))),
            ..cfg.basis.clone()
        }
        .with_dims(v1.ncols(), v2.ncols(), v1.ncols(), 0, 0);
        let fit = match fit_basis(v1.view(), v2.view(), &basis) {
            Ok(f) => f,
            Err(e) => {
                test.suppressed = true;
                test.note = Some(format!("fit failed, cluster held back: {e}"));
                return Ok((test, 1));
            }
        };
        for p in &entry.parents {
            let s = kernel_r2(fit.z_samples.view(), table.samples(p), &cfg.r2)?.value;
            test.scores.push((p.clone(), s));
            if s >= cfg.tau {
                test.suppressed = true;
            }
        }
        Ok::<_, SearchError>((test, 1))
    });
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        let (test, fits) = r?;
        counter.add_path(fits);
        out.push(test);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveUpdate {
    pub substituted: Vec<JointEntry>,
    pub pruned: Vec<(String, f64)>,
}

/// Swaps the children of every unsuppressed cluster for its parents, then
/// drops variables independent of the rest.
pub fn update_active_set(
    active: &mut Vec<ActiveVariable>,
    table: &ParentTable,
    cfg: &SearchConfig,
    iteration: usize,
) -> Result<ActiveUpdate, SearchError> {
    let mut update = ActiveUpdate::default();
    for entry in &table.joint {
        if entry.parents.iter().any(|p| table.suppressed.contains(p)) {
            continue;
        }
        active.retain(|a| !entry.children.contains(&a.id));
        for p in &entry.parents {
            active.push(ActiveVariable {
                id: p.clone(),
                samples: table.estimates[p].samples.clone(),
                origin: Origin::Estimated {
                    iteration,
                    children: table.children_of(p),
                },
            });
        }
        update.substituted.push(entry.clone());
    }
    active.sort_by(|a, b| a.id.cmp(&b.id));
    update.pruned = prune_independent(active, cfg)?;
    Ok(update)
}

/// Two remaining variables joined under a common parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairClosure {
    pub entry: JointEntry,
    /// Larger of the two directional scores between the pair.
    pub dependence: f64,
}

/// Two dependent variables with no directed path between them can only be
/// explained by a shared latent cause. Reuses the estimate fitted for the
/// first of them as that parent and replaces the pair by it.
pub fn close_dependent_pair(
    active: &mut Vec<ActiveVariable>,
    table: &mut ParentTable,
    cfg: &SearchConfig,
    iteration: usize,
) -> Result<Option<PairClosure>, SearchError> {
    let [a, b] = active.as_slice() else { return Ok(None) };
    let Some(parent) = table.entries.get(&a.id).and_then(|ps| ps.first()).cloned() else {
        return Ok(None);
    };
    let dependence = independence_score(a.samples.view(), b.samples.view(), &cfg.r2)?;
    if dependence <= cfg.eps {
        return Ok(None);
    }
    let children = vec![a.id.clone(), b.id.clone()];
    for c in &children {
        table.entries.insert(c.clone(), vec![parent.clone()]);
    }
    table.suppressed.remove(&parent);
    let entry = JointEntry {
        parents: vec![parent.clone()],
        children: children.clone(),
    };
    active.clear();
    active.push(ActiveVariable {
        id: parent.clone(),
        samples: table.estimates[&parent].samples.clone(),
        origin: Origin::Estimated { iteration, children },
    });
    Ok(Some(PairClosure { entry, dependence }))
}

/// Removes every variable whose scores against the rest stay within `eps`.
pub(crate) fn prune_independent(active: &mut Vec<ActiveVariable>, cfg: &SearchConfig) -> Result<Vec<(String, f64)>, SearchError> {
    let n = active.first().map(|a| a.samples.nrows()).unwrap_or(0);
    let scores = map_indexed(active.len(), |i| {
        let rest: Vec<ArrayView2<f64>> = active
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| b.samples.view())
            .collect();
        let rest = concat(n, &rest);
        independence_score(active[i].samples.view(), rest.view(), &cfg.r2)
    });
    let mut pruned = Vec::new();
    let mut keep = Vec::with_capacity(active.len());
    for (a, s) in active.drain(..).zip(scores) {
        let s = s?;
        if s <= cfg.eps {
            pruned.push((a.id.clone(), s));
        } else {
            keep.push(a);
        }
    }
    *active = keep;
    Ok(pruned)
}
