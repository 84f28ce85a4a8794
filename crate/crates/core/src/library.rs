//! Two-tier skill store: a small cache that selection draws from and a larger
//! reservoir archive, with utility tracking and fixed-order maintenance.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::env::SyntheticQuery;
use crate::policy::{sequence_logprob, Conditioning, PolicyInterface, Trace};
use crate::skill_doc::SkillDocument;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl core::fmt::Display for EntryId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LibraryError {
    #[error("entry {0} is not in the cache")]
    UnknownEntry(EntryId),
    #[error("information gain needs at least one trace")]
    EmptyTraceSet,
    #[error("corrupt snapshot at line {line}: {reason}")]
    CorruptSnapshot { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub id: EntryId,
    pub doc: SkillDocument,
    pub utility: f64,
    /// Times selected and injected.
    pub usage_count: u64,
    pub created_step: u64,
    pub reward_sum: f64,
    pub success_count: u64,
    pub use_count_for_stats: u64,
    pub last_exact_ig: Option<f64>,
}

impl LibraryEntry {
    fn new(id: EntryId, doc: SkillDocument, step: u64) -> LibraryEntry {
        LibraryEntry {
            id,
            doc,
            utility: 0.0,
            usage_count: 0,
            created_step: step,
            reward_sum: 0.0,
            success_count: 0,
            use_count_for_stats: 0,
            last_exact_ig: None,
        }
    }
}

/// `u ← β·u + (1−β)·r`, plus one proxy-IG observation.
pub fn update_utility(entry: &mut LibraryEntry, reward: f64, succeeded: bool, beta: f64) {
    entry.utility = beta * entry.utility + (1.0 - beta) * reward;
    entry.usage_count += 1;
    entry.reward_sum += reward;
    entry.use_count_for_stats += 1;
    if succeeded {
        entry.success_count += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaintenanceOp {
    Update,
    Add,
    Evict,
    Load,
    Delete,
}

impl MaintenanceOp {
    pub const ORDER: [MaintenanceOp; 5] =
        [MaintenanceOp::Update, MaintenanceOp::Add, MaintenanceOp::Evict, MaintenanceOp::Load, MaintenanceOp::Delete];
}

/// Feedback for the skill that was injected into a query's rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedFeedback {
    pub id: EntryId,
    /// Group-mean reward of the query's trajectories.
    pub reward: f64,
    pub succeeded: bool,
}

/// One trajectory's contribution to the global statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeStat {
    pub reward: f64,
    pub correct: bool,
}

/// What one maintain call did, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaintenanceLog {
    pub ops: Vec<MaintenanceOp>,
    pub added: Option<EntryId>,
    pub evicted: Vec<EntryId>,
    /// Reservoir entries dropped to make room during eviction.
    pub dropped: Vec<EntryId>,
    /// `(loaded from reservoir, moved out of cache)`.
    pub swapped: Option<(EntryId, EntryId)>,
    pub deleted: Vec<EntryId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoTierLibrary {
    pub cache_capacity: usize,
    pub reservoir_capacity: usize,
    pub cache: Vec<LibraryEntry>,
    pub reservoir: Vec<LibraryEntry>,
    pub global_reward_sum: f64,
    pub global_success_count: u64,
    pub global_trajectory_count: u64,
    next_id: u64,
}

/// Position of the lowest-utility entry; ties go to the smaller creation
/// step, then the earlier position.
fn min_position(entries: &[LibraryEntry]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &entries[b];
                let ord = e.utility.total_cmp(&cur.utility).then(e.created_step.cmp(&cur.created_step));
                if ord == Ordering::Less {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Position of the highest-utility entry; ties go to the smaller creation
/// step, then the earlier position.
fn max_position(entries: &[LibraryEntry]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &entries[b];
                let better = e.utility > cur.utility || (e.utility == cur.utility && e.created_step < cur.created_step);
                if better {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

impl TwoTierLibrary {
    /// # Panics
    /// If either capacity is zero.
    pub fn new(cache_capacity: usize, reservoir_capacity: usize) -> TwoTierLibrary {
        assert!(cache_capacity >= 1 && reservoir_capacity >= 1, "capacities must be at least 1");
        TwoTierLibrary {
            cache_capacity,
            reservoir_capacity,
            cache: Vec::new(),
            reservoir: Vec::new(),
            global_reward_sum: 0.0,
            global_success_count: 0,
            global_trajectory_count: 0,
            next_id: 0,
        }
    }

    /// Cache initialized with `seeds` at step 0, reservoir empty.
    pub fn with_seeds(cache_capacity: usize, reservoir_capacity: usize, seeds: &[SkillDocument]) -> TwoTierLibrary {
        let mut lib = TwoTierLibrary::new(cache_capacity, reservoir_capacity);
        for s in seeds {
            lib.add(s.clone(), 0);
        }
        lib.evict();
        lib
    }

    pub fn len(&self) -> usize {
        self.cache.len() + self.reservoir.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cache_index(&self, id: EntryId) -> Option<usize> {
        self.cache.iter().position(|e| e.id == id)
    }

    pub fn get(&self, id: EntryId) -> Option<&LibraryEntry> {
        self.cache.iter().chain(&self.reservoir).find(|e| e.id == id)
    }

    pub fn get_mut(&mut self, id: EntryId) -> Option<&mut LibraryEntry> {
        self.cache.iter_mut().chain(self.reservoir.iter_mut()).find(|e| e.id == id)
    }

    /// Appends a fresh entry (utility 0, unused) to the cache. The cache may
    /// exceed its capacity until the next [`evict`](Self::evict).
    pub fn add(&mut self, doc: SkillDocument, step: u64) -> EntryId {
        let id = EntryId(self.next_id);
        self.next_id += 1;
        self.cache.push(LibraryEntry::new(id, doc, step));
        id
    }

    /// Moves minimum-utility cache entries to the reservoir until the cache
    /// fits. A full reservoir first drops its own minimum-utility entry.
    /// Returns `(evicted, dropped)`.
    pub fn evict(&mut self) -> (Vec<EntryId>, Vec<EntryId>) {
        let mut evicted = Vec::new();
        let mut dropped = Vec::new();
        while self.cache.len() > self.cache_capacity {
            let Some(pos) = min_position(&self.cache) else { break };
            let entry = self.cache.remove(pos);
            if self.reservoir.len() >= self.reservoir_capacity {
                if let Some(r) = min_position(&self.reservoir) {
                    dropped.push(self.reservoir.remove(r).id);
                }
            }
            evicted.push(entry.id);
            self.reservoir.push(entry);
        }
        (evicted, dropped)
    }

    /// Swaps the best reservoir entry with the worst cache entry when the
    /// former's utility is strictly higher. At most one swap.
    pub fn load(&mut self) -> Option<(EntryId, EntryId)> {
        let r = max_position(&self.reservoir)?;
        let c = min_position(&self.cache)?;
        if self.reservoir[r].utility > self.cache[c].utility {
            core::mem::swap(&mut self.reservoir[r], &mut self.cache[c]);
            Some((self.cache[c].id, self.reservoir[r].id))
        } else {
            None
        }
    }

    /// Nearest-rank 10th percentile of reservoir utilities.
    pub fn reservoir_p10(&self) -> Option<f64> {
        if self.reservoir.is_empty() {
            return None;
        }
        let mut u: Vec<f64> = self.reservoir.iter().map(|e| e.utility).collect();
        u.sort_by(f64::total_cmp);
        let n = u.len();
        let rank = n.div_ceil(10); // ⌈0.1·n⌉, at least 1
        Some(u[rank.max(1) - 1])
    }

    /// Removes reservoir entries strictly below the 10th percentile that were
    /// never used.
    pub fn delete(&mut self) -> Vec<EntryId> {
        let Some(p10) = self.reservoir_p10() else { return Vec::new() };
        let mut deleted = Vec::new();
        self.reservoir.retain(|e| {
            let doomed = e.utility < p10 && e.usage_count == 0;
            if doomed {
                deleted.push(e.id);
            }
            !doomed
        });
        deleted
    }

    pub fn record_outcomes(&mut self, outcomes: &[OutcomeStat]) {
        for o in outcomes {
            self.global_reward_sum += o.reward;
            self.global_trajectory_count += 1;
            if o.correct {
                self.global_success_count += 1;
            }
        }
    }

    /// Update → Add → Evict → Load → Delete. Update runs only when a skill
    /// was selected, Add only when a document survived validation.
    pub fn maintain(
        &mut self,
        selected: Option<SelectedFeedback>,
        new_doc: Option<SkillDocument>,
        step: u64,
        beta: f64,
        outcomes: &[OutcomeStat],
    ) -> Result<MaintenanceLog, LibraryError> {
        let selected_pos = match selected {
            Some(s) => Some(self.cache_index(s.id).ok_or(LibraryError::UnknownEntry(s.id))?),
            None => None,
        };
        self.record_outcomes(outcomes);
        let mut log = MaintenanceLog::default();
        if let (Some(pos), Some(s)) = (selected_pos, selected) {
            update_utility(&mut self.cache[pos], s.reward, s.succeeded, beta);
            log.ops.push(MaintenanceOp::Update);
        }
        if let Some(doc) = new_doc {
            log.added = Some(self.add(doc, step));
            log.ops.push(MaintenanceOp::Add);
        }
        log.ops.push(MaintenanceOp::Evict);
        let (evicted, dropped) = self.evict();
        log.evicted = evicted;
        log.dropped = dropped;
        if !self.reservoir.is_empty() {
            log.ops.push(MaintenanceOp::Load);
            log.swapped = self.load();
            log.ops.push(MaintenanceOp::Delete);
            log.deleted = self.delete();
        }
        Ok(log)
    }

    pub fn global_mean_reward(&self) -> f64 {
        if self.global_trajectory_count == 0 {
            0.0
        } else {
            self.global_reward_sum / self.global_trajectory_count as f64
        }
    }

    pub fn global_success_rate(&self) -> f64 {
        if self.global_trajectory_count == 0 {
            0.0
        } else {
            self.global_success_count as f64 / self.global_trajectory_count as f64
        }
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// One JSON object per line: a header, then cache entries, then
    /// reservoir entries.
    pub fn snapshot(&self) -> String {
        let header = SnapshotHeader {
            version: SNAPSHOT_VERSION,
            cc: self.cache_capacity,
            cr: self.reservoir_capacity,
            next_id: self.next_id,
            global_reward_sum: self.global_reward_sum,
            global_success: self.global_success_count,
            global_trajectories: self.global_trajectory_count,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for (tier, entries) in [(Tier::Cache, &self.cache), (Tier::Reservoir, &self.reservoir)] {
            for e in entries {
                let line = SnapshotLine {
                    tier,
                    id: e.id,
                    doc: e.doc.clone(),
                    utility: e.utility,
                    usage: e.usage_count,
                    created: e.created_step,
                    reward_sum: e.reward_sum,
                    success: e.success_count,
                    uses: e.use_count_for_stats,
                    last_exact_ig: e.last_exact_ig,
                };
                out.push_str(&serde_json::to_string(&line).expect("entry serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn restore(text: &str) -> Result<TwoTierLibrary, LibraryError> {
        let corrupt = |line: usize, reason: String| LibraryError::CorruptSnapshot { line, reason };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| corrupt(1, "missing header".into()))?;
        let header: SnapshotHeader = serde_json::from_str(first).map_err(|e| corrupt(1, format!("{e}")))?;
        if header.version != SNAPSHOT_VERSION {
            return Err(corrupt(1, format!("unsupported version {}", header.version)));
        }
        if header.cc == 0 || header.cr == 0 {
            return Err(corrupt(1, "capacities must be at least 1".into()));
        }
        let mut lib = TwoTierLibrary::new(header.cc, header.cr);
        lib.next_id = header.next_id;
        lib.global_reward_sum = header.global_reward_sum;
        lib.global_success_count = header.global_success;
        lib.global_trajectory_count = header.global_trajectories;
        for (i, raw) in lines {
            let line: SnapshotLine = serde_json::from_str(raw).map_err(|e| corrupt(i + 1, format!("{e}")))?;
            if lib.get(line.id).is_some() {
                return Err(corrupt(i + 1, format!("duplicate entry {}", line.id)));
            }
            if line.id.0 >= lib.next_id {
                return Err(corrupt(i + 1, format!("entry {} not below next_id", line.id)));
            }
            if let Err(v) = line.doc.check_invariants() {
                return Err(corrupt(i + 1, format!("{v}")));
            }
            let entry = LibraryEntry {
                id: line.id,
                doc: line.doc,
                utility: line.utility,
                usage_count: line.usage,
                created_step: line.created,
                reward_sum: line.reward_sum,
                success_count: line.success,
                use_count_for_stats: line.uses,
                last_exact_ig: line.last_exact_ig,
            };
            match line.tier {
                Tier::Cache => lib.cache.push(entry),
                Tier::Reservoir => lib.reservoir.push(entry),
            }
        }
        Ok(lib)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Tier {
    Cache,
    Reservoir,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotHeader {
    version: u32,
    cc: usize,
    cr: usize,
    next_id: u64,
    global_reward_sum: f64,
    global_success: u64,
    global_trajectories: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotLine {
    tier: Tier,
    id: EntryId,
    doc: SkillDocument,
    utility: f64,
    usage: u64,
    created: u64,
    reward_sum: f64,
    success: u64,
    uses: u64,
    last_exact_ig: Option<f64>,
}

/// `½(r̄_m − r̄_global) + ½(SR_m − SR_global)`; 0 for unused entries or an
/// empty history.
pub fn ig_proxy(entry: &LibraryEntry, lib: &TwoTierLibrary) -> f64 {
    if entry.use_count_for_stats == 0 || lib.global_trajectory_count == 0 {
        return 0.0;
    }
    let n = entry.use_count_for_stats as f64;
    let r_m = entry.reward_sum / n;
    let sr_m = entry.success_count as f64 / n;
    0.5 * (r_m - lib.global_mean_reward()) + 0.5 * (sr_m - lib.global_success_rate())
}

/// Mean gain in trace log-likelihood from conditioning on `skill`.
pub fn ig_exact<P: PolicyInterface + ?Sized>(
    policy: &P,
    skill: &SkillDocument,
    query: &SyntheticQuery,
    traces: &[Trace],
) -> Result<f64, LibraryError> {
    if traces.is_empty() {
        return Err(LibraryError::EmptyTraceSet);
    }
    let with = Conditioning::with_skill(query, policy.skill_cue(skill));
    let without = Conditioning::unaided(query);
    let total: f64 = traces
        .iter()
        .map(|t| sequence_logprob(policy, &with, &[], &t.tokens) - sequence_logprob(policy, &without, &[], &t.tokens))
        .sum();
    Ok(total / traces.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::seed_skills;
    use crate::skill_doc::ProblemType;
    use alloc::vec;

    fn doc(name: &str) -> SkillDocument {
        SkillDocument {
            skill_name: name.into(),
            problem_type: ProblemType::General,
            key_insight: "insight".into(),
            method: vec!["one".into(), "two".into()],
            check: "check".into(),
        }
    }

    fn lib_with_utilities(cc: usize, cr: usize, cache: &[f64], reservoir: &[f64]) -> TwoTierLibrary {
        let mut lib = TwoTierLibrary::new(cc, cr);
        for (i, u) in cache.iter().enumerate() {
            let id = lib.add(doc(&format!("c{i}")), i as u64);
            lib.get_mut(id).unwrap().utility = *u;
        }
        for (i, u) in reservoir.iter().enumerate() {
            let id = lib.add(doc(&format!("r{i}")), i as u64);
            let pos = lib.cache_index(id).unwrap();
            let mut e = lib.cache.remove(pos);
            e.utility = *u;
            lib.reservoir.push(e);
        }
        lib
    }

    #[test]
    fn ema_examples() {
        let mut e = LibraryEntry::new(EntryId(0), doc("a"), 0);
        update_utility(&mut e, 2.0, true, 0.9);
        assert!((e.utility - 0.2).abs() < 1e-15);
        assert_eq!((e.usage_count, e.use_count_for_stats, e.success_count), (1, 1, 1));
        e.utility = 1.0;
        update_utility(&mut e, 1.0, false, 0.9);
        assert_eq!(e.utility, 1.0);
        assert_eq!(e.success_count, 1);
    }

    #[test]
    fn add_starts_at_zero_and_may_overflow() {
        let mut lib = TwoTierLibrary::new(10, 100);
        let id = lib.add(doc("a"), 4);
        assert_eq!(lib.cache.len(), 1);
        let e = lib.get(id).unwrap();
        assert_eq!((e.utility, e.usage_count, e.created_step), (0.0, 0, 4));
        for i in 0..10 {
            lib.add(doc(&format!("d{i}")), 5);
        }
        assert_eq!(lib.cache.len(), 11);
    }

    #[test]
    fn evict_moves_minimum_with_metadata() {
        let mut lib = lib_with_utilities(2, 100, &[0.5, 0.1, 0.9], &[]);
        lib.cache[1].usage_count = 7;
        let (evicted, dropped) = lib.evict();
        assert_eq!(evicted, vec![EntryId(1)]);
        assert!(dropped.is_empty());
        assert_eq!(lib.reservoir[0].utility, 0.1);
        assert_eq!(lib.reservoir[0].usage_count, 7);
        let before = lib.clone();
        assert!(lib.evict().0.is_empty());
        assert_eq!(lib, before);
    }

    #[test]
    fn evict_tie_breaks_on_creation_then_order() {
        let mut lib = TwoTierLibrary::new(2, 10);
        let a = lib.add(doc("a"), 5);
        let b = lib.add(doc("b"), 3);
        let _c = lib.add(doc("c"), 3);
        assert_eq!(lib.evict().0, vec![b]);
        lib.add(doc("d"), 5);
        assert_eq!(lib.evict().0, vec![_c]);
        let _ = a;
    }

    #[test]
    fn evict_into_full_reservoir_drops_its_minimum() {
        let mut lib = lib_with_utilities(1, 2, &[0.3, 0.6], &[0.2, 0.05]);
        let (evicted, dropped) = lib.evict();
        assert_eq!(evicted.len(), 1);
        assert_eq!(dropped.len(), 1);
        assert_eq!(lib.reservoir.len(), 2);
        assert!(lib.reservoir.iter().all(|e| e.utility != 0.05));
    }

    #[test]
    fn load_swaps_on_strict_improvement_only() {
        let mut lib = lib_with_utilities(3, 10, &[0.3, 0.5, 0.7], &[0.8, 0.1]);
        let swapped = lib.load().unwrap();
        assert_eq!(lib.cache.iter().map(|e| e.utility).collect::<Vec<_>>(), vec![0.8, 0.5, 0.7]);
        assert_eq!(swapped, (lib.cache[0].id, lib.reservoir[0].id));
        assert_eq!(lib.reservoir[0].utility, 0.3);

        let mut lib = lib_with_utilities(2, 10, &[0.3, 0.5], &[0.3]);
        assert!(lib.load().is_none());
        let mut lib = lib_with_utilities(2, 10, &[0.3, 0.5], &[]);
        assert!(lib.load().is_none());
    }

    #[test]
    fn delete_nearest_rank_boundary() {
        let u: Vec<f64> = (0..10).map(|i| f64::from(i) / 10.0).collect();
        let mut lib = lib_with_utilities(1, 100, &[], &u);
        assert_eq!(lib.reservoir_p10(), Some(0.0));
        assert!(lib.delete().is_empty());
        assert_eq!(lib.reservoir.len(), 10);
    }

    #[test]
    fn delete_respects_usage() {
        let mut u: Vec<f64> = (0..20).map(|i| f64::from(i) / 10.0).collect();
        u[0] = -1.0;
        u[1] = -0.5;
        let mut lib = lib_with_utilities(1, 100, &[], &u);
        // P10 of 20 values is the 2nd smallest (−0.5); only −1.0 is below it.
        lib.reservoir[0].usage_count = 3;
        assert!(lib.delete().is_empty());
        lib.reservoir[0].usage_count = 0;
        assert_eq!(lib.delete(), vec![EntryId(0)]);
        assert_eq!(lib.reservoir.len(), 19);
        let mut empty = TwoTierLibrary::new(1, 1);
        assert!(empty.delete().is_empty());
    }

    #[test]
    fn maintain_order_and_skips() {
        let mut lib = TwoTierLibrary::with_seeds(10, 100, &seed_skills());
        let log = lib.maintain(None, Some(doc("x")), 1, 0.9, &[]).unwrap();
        assert_eq!(log.ops, vec![MaintenanceOp::Add, MaintenanceOp::Evict]);
        let log = lib.maintain(None, None, 2, 0.9, &[]).unwrap();
        assert_eq!(log.ops, vec![MaintenanceOp::Evict]);

        let sel = lib.cache[0].id;
        let fb = SelectedFeedback { id: sel, reward: 2.0, succeeded: true };
        let log = lib.maintain(Some(fb), Some(doc("y")), 3, 0.9, &[]).unwrap();
        assert_eq!(log.ops[..2], [MaintenanceOp::Update, MaintenanceOp::Add]);
        assert!((lib.get(sel).unwrap().utility - 0.2).abs() < 1e-15);

        let missing = SelectedFeedback { id: EntryId(999), reward: 1.0, succeeded: true };
        let before = lib.clone();
        assert_eq!(lib.maintain(Some(missing), None, 4, 0.9, &[]), Err(LibraryError::UnknownEntry(EntryId(999))));
        assert_eq!(lib, before);
    }

    #[test]
    fn maintain_with_reservoir_runs_all_five() {
        let mut lib = lib_with_utilities(2, 10, &[0.5, 0.6], &[0.1]);
        let sel = lib.cache[0].id;
        let log = lib
            .maintain(Some(SelectedFeedback { id: sel, reward: 1.0, succeeded: true }), Some(doc("n")), 9, 0.9, &[])
            .unwrap();
        assert_eq!(log.ops, MaintenanceOp::ORDER.to_vec());
        assert_eq!(log.evicted, vec![log.added.unwrap()]);
    }

    #[test]
    fn proxy_ig_examples() {
        let mut lib = TwoTierLibrary::new(10, 100);
        lib.record_outcomes(&[OutcomeStat { reward: 2.0, correct: true }, OutcomeStat { reward: 0.0, correct: false }]);
        let id = lib.add(doc("a"), 0);
        assert_eq!(ig_proxy(lib.get(id).unwrap(), &lib), 0.0);
        let e = lib.get_mut(id).unwrap();
        e.use_count_for_stats = 10;
        e.reward_sum = 16.0;
        e.success_count = 8;
        // r̄_global = 1.0, SR_global = 0.5
        assert!((ig_proxy(lib.get(id).unwrap(), &lib) - 0.45).abs() < 1e-12);
        let e = lib.get_mut(id).unwrap();
        e.reward_sum = 10.0;
        e.success_count = 5;
        assert!(ig_proxy(lib.get(id).unwrap(), &lib).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trip() {
        let empty = TwoTierLibrary::new(10, 100);
        let text = empty.snapshot();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(TwoTierLibrary::restore(&text).unwrap(), empty);

        let mut lib = TwoTierLibrary::with_seeds(10, 100, &seed_skills());
        for (i, e) in lib.cache.iter_mut().enumerate() {
            e.utility = 0.1 * i as f64 - 0.13;
        }
        lib.cache[2].last_exact_ig = Some(-0.25);
        let restored = TwoTierLibrary::restore(&lib.snapshot()).unwrap();
        assert_eq!(restored, lib);
        assert!(text.starts_with("{\"version\":1,\"cc\":10,\"cr\":100"));
    }

    #[test]
    fn corrupt_snapshots_are_rejected() {
        assert!(matches!(TwoTierLibrary::restore(""), Err(LibraryError::CorruptSnapshot { line: 1, .. })));
        let lib = TwoTierLibrary::with_seeds(10, 100, &seed_skills());
        let mut text = lib.snapshot();
        text.push_str("{not json}\n");
        assert!(matches!(TwoTierLibrary::restore(&text), Err(LibraryError::CorruptSnapshot { line: 7, .. })));
        let text = lib.snapshot().replace("\"version\":1", "\"version\":2");
        assert!(TwoTierLibrary::restore(&text).is_err());
    }
}
