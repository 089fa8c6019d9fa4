//! Test-only oracles. None of these call the simulator's own derived-value
//! helpers; they recompute from raw configuration and table contents.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use telehammer::cache::SetHash;
use telehammer::config::MachineConfig;
use telehammer::memgraph::{CommPath, FeasibilityParams, MemGraph, NodeId, NodeKind};
use telehammer::mmu::Machine;

// ---- page tables and DRAM ----

/// Physical address of the Level-1 entry for `vaddr`, from raw table words.
pub fn l1pte_paddr(m: &Machine, vaddr: u64) -> Option<u64> {
    let t = m.tables();
    let mut table = t.root();
    for level in (2..=4u32).rev() {
        let idx = ((vaddr >> (12 + 9 * (level - 1))) & 511) as usize;
        let e = t.entry(table, idx);
        if e & 1 == 0 || e & (1 << 7) != 0 {
            return None;
        }
        table = (e >> 12) & ((1 << 40) - 1);
    }
    Some(table * 4096 + ((vaddr >> 12) & 511) * 8)
}

/// Bank and row under the column | bank | row layout the presets use.
pub fn bank_row(cfg: &MachineConfig, paddr: u64) -> (u64, u64) {
    let d = &cfg.dram;
    let chunk = paddr / d.row_bytes;
    (chunk % d.banks as u64, chunk / d.banks as u64)
}

/// (slice, set) of an address, for identity set indexing.
pub fn llc_slot(cfg: &MachineConfig, paddr: u64) -> (u32, u64) {
    let llc = &cfg.cache.llc;
    assert_eq!(llc.set_hash, SetHash::Identity, "oracle covers identity set indexing only");
    let mut slice = 0;
    for (i, m) in llc.slice_masks.iter().enumerate() {
        slice |= ((paddr & m).count_ones() & 1) << i;
    }
    (slice, (paddr / cfg.cache.line_bytes) % llc.sets as u64)
}

pub fn paddr_of(m: &Machine, vaddr: u64) -> u64 {
    let t = m.tables();
    let mut table = t.root();
    for level in (1..=4u32).rev() {
        let idx = ((vaddr >> (12 + 9 * (level - 1))) & 511) as usize;
        let e = t.entry(table, idx);
        assert!(e & 1 == 1, "{vaddr:#x} unmapped");
        let frame = (e >> 12) & ((1 << 40) - 1);
        if level == 2 && e & (1 << 7) != 0 {
            return frame * 4096 + (vaddr & ((1 << 21) - 1));
        }
        table = frame;
    }
    table * 4096 + (vaddr & 0xfff)
}

// ---- flip causality ----

/// Every flip needs a same-bank row within `r_max` that was activated at
/// least `flip_threshold` times in the flip's refresh window.
pub fn causality_oracle(m: &Machine) -> bool {
    let log = m.activation_log().expect("activation log enabled");
    let d = &m.config().dram;
    m.flips().iter().all(|f| {
        let e = &f.event;
        (e.row.saturating_sub(d.r_max)..=e.row + d.r_max)
            .filter(|&r| r != e.row)
            .any(|r| log.get(&(e.window, e.bank, r)).copied().unwrap_or(0) >= d.flip_threshold)
    })
}

pub fn activation_total(log: &HashMap<(u64, u32, u32), u32>) -> u64 {
    log.values().map(|&c| c as u64).sum()
}

// ---- TLB ----

/// Two-level victim-style TLB with LRU in both levels, restricted to the
/// target's sets. Returns the smallest number of congruent pages whose
/// access evicts a cold target, searching every size up to `max`.
pub fn lru_min_eviction(l1_ways: usize, l2_ways: usize, max: usize) -> Option<usize> {
    (1..=max).find(|&k| {
        let (mut l1, mut l2): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
        let touch = |p: usize, l1: &mut Vec<usize>, l2: &mut Vec<usize>| {
            if let Some(i) = l1.iter().position(|&x| x == p) {
                l1.remove(i);
            } else if let Some(i) = l2.iter().position(|&x| x == p) {
                l2.remove(i);
            }
            l1.insert(0, p);
            if l1.len() > l1_ways {
                l2.insert(0, l1.pop().unwrap());
                l2.truncate(l2_ways);
            }
        };
        touch(0, &mut l1, &mut l2);
        for p in 1..=k {
            touch(p, &mut l1, &mut l2);
        }
        !l1.contains(&0) && !l2.contains(&0)
    })
}

// ---- memory graphs ----

/// A straight chain n0 -> n1 -> ... with the given latencies; returns the
/// path over every edge.
pub fn chain(lats: &[u64]) -> (MemGraph, CommPath) {
    let mut g = MemGraph::new();
    let e = g.add_entity("walker").unwrap();
    let mut prev = g.add_node("n0", NodeKind::Other, None, true, false).unwrap();
    g.grant(prev, e);
    let mut edges = Vec::new();
    for (i, &l) in lats.iter().enumerate() {
        let n = g.add_node(&format!("n{}", i + 1), NodeKind::CacheLine, None, true, false).unwrap();
        g.grant(n, e);
        edges.push(g.add_edge(prev, e, n, l).unwrap());
        prev = n;
    }
    (g, CommPath { edges })
}

pub struct Scenario {
    pub g: MemGraph,
    pub attacker: usize,
    pub m_a: NodeId,
    pub m_h: NodeId,
    pub m_v: NodeId,
    pub p: FeasibilityParams,
}

/// Random graph with `n` nodes, the last two being DRAM rows used as
/// hammer and victim. The attacker never gets the victim.
pub fn random_scenario(rng: &mut ChaCha8Rng, n: usize) -> Scenario {
    let mut g = MemGraph::new();
    let attacker = g.add_entity("user").unwrap();
    let walker = g.add_entity("walker").unwrap();
    let mut ids = Vec::new();
    for i in 0..n {
        let is_row = i + 2 >= n;
        let valid = is_row || rng.gen_bool(0.8);
        let sensitive = valid && rng.gen_bool(if is_row { 0.85 } else { 0.2 });
        let (kind, row) = if is_row { (NodeKind::DramRow, Some(rng.gen_range(0..6))) } else { (NodeKind::CacheLine, None) };
        let id = g.add_node(&format!("n{i}"), kind, row, valid, sensitive).unwrap();
        g.grant(id, walker);
        if i + 1 < n && rng.gen_bool(0.6) {
            g.grant(id, attacker);
        }
        ids.push(id);
    }
    for _ in 0..rng.gen_range(0..3 * n) {
        let a = ids[rng.gen_range(0..n)];
        let b = ids[rng.gen_range(0..n)];
        if a != b {
            g.add_edge(a, walker, b, rng.gen_range(1..400)).unwrap();
        }
    }
    let p = FeasibilityParams {
        r_max: rng.gen_range(1..=2),
        t_max: rng.gen_range(0..1500),
        t_set: rng.gen_range(0..300),
        t_node_attacker: rng.gen_range(0..200),
        t_delta: rng.gen_range(0..100),
    };
    Scenario { g, attacker, m_a: ids[rng.gen_range(0..n - 1)], m_h: ids[n - 2], m_v: ids[n - 1], p }
}

// ---- experiment runners shared with the acceptance test ----

use telehammer::cache::ReplacementPolicy;
use telehammer::config::{preset, EvictionConfig};
use telehammer::eviction::{
    build_tlb_eviction_set, minimal_tlb_eviction_size, prepare_llc_pool, profile_tlb_set, select_llc_eviction_set,
    TlbBuffer, TlbSizeResult,
};
use telehammer::mmu::PageMode;
use rand::SeedableRng;

pub const TLB_TARGET: u64 = 0x40_0000_5000;

pub fn tlb_min_size(preset_name: &str, policy: ReplacementPolicy) -> (Machine, TlbBuffer, TlbSizeResult) {
    let mut cfg = preset(preset_name).unwrap();
    cfg.tlb.policy = policy;
    let mut m = Machine::new(cfg).unwrap();
    let buf = TlbBuffer::allocate(&mut m).unwrap();
    m.map_region(TLB_TARGET, 4096, PageMode::Regular).unwrap();
    let r = minimal_tlb_eviction_size(&mut m, &buf, TLB_TARGET, &EvictionConfig::default()).unwrap();
    (m, buf, r)
}

/// Smallest k for which every one of `samples` random k-subsets of the
/// congruent pages reaches `need` misses out of `reps`.
pub fn subset_min_size(m: &mut Machine, buf: &TlbBuffer, reps: u32, need: u32, samples: usize, seed: u64) -> Option<usize> {
    use rand::seq::SliceRandom;
    let all = buf.congruent(m, TLB_TARGET);
    let all = &all[..all.len().min(16)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=all.len()).find(|&k| {
        (0..samples).all(|_| {
            let set: Vec<u64> = all.choose_multiple(&mut rng, k).copied().collect();
            profile_tlb_set(m, TLB_TARGET, &set, reps, &mut rng).unwrap() >= need
        })
    })
}

/// LLC set selection over `n` random targets; counts selections whose first member
/// shares (slice, set) with the target's L1PTE.
pub fn llc_select_congruence(preset_name: &str, mode: PageMode, n: usize, seed: u64) -> usize {
    let mut m = Machine::new(preset(preset_name).unwrap()).unwrap();
    let buf = TlbBuffer::allocate(&mut m).unwrap();
    let pool = prepare_llc_pool(&mut m, mode).unwrap();
    let base = 0x40_0000_0000u64;
    let spans = 16u64;
    m.map_region(base, spans << 21, PageMode::Regular).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..n {
        let target = base + rng.gen_range(0..spans) * (1 << 21) + rng.gen_range(8..512) * 4096;
        let tlb = build_tlb_eviction_set(&m, &buf, target, 8).unwrap();
        let sel = select_llc_eviction_set(&mut m, &pool, &tlb, target).unwrap();
        let pte = l1pte_paddr(&m, target).unwrap();
        let member = paddr_of(&m, sel.set.members[0]);
        hits += (llc_slot(m.config(), member) == llc_slot(m.config(), pte)) as usize;
    }
    hits
}

use telehammer::attack::{pthammer_round, HammerReport, PairInfo, Session};
use telehammer::config::Scenario as Config;

/// `Session::setup` with the activation log on from the first access.
pub fn instrumented(sc: &Config) -> Session {
    let mut s = Session::prepare(sc).unwrap();
    s.m.set_activation_log(true);
    if sc.attack.kind == telehammer::config::AttackKind::Pthammer {
        s.build_eviction().unwrap();
        s.calibrate().unwrap();
    }
    s
}

#[derive(Debug, Default)]
pub struct PairAudit {
    pub probed: usize,
    pub passing: usize,
    pub same_bank: usize,
    pub two_rows: usize,
}

impl PairAudit {
    pub fn same_bank_rate(&self) -> f64 {
        self.same_bank as f64 / self.passing.max(1) as f64
    }
    pub fn two_row_rate(&self) -> f64 {
        self.two_rows as f64 / self.same_bank.max(1) as f64
    }
}

/// Probe fresh stride and random pairs against the calibrated threshold and
/// label every passing pair from the raw tables.
pub fn audit_pairs(s: &mut Session, n: usize) -> PairAudit {
    let thr = s.calibration.unwrap().threshold;
    let mut pairs = s.stride_pairs(n);
    pairs.extend(s.random_pairs(n));
    let mut a = PairAudit::default();
    for (x, y) in pairs {
        a.probed += 1;
        if s.probe_pair(x, y).unwrap() < thr {
            continue;
        }
        a.passing += 1;
        let (bx, rx) = bank_row(s.m.config(), l1pte_paddr(&s.m, x).unwrap());
        let (by, ry) = bank_row(s.m.config(), l1pte_paddr(&s.m, y).unwrap());
        if bx == by {
            a.same_bank += 1;
            a.two_rows += (rx.abs_diff(ry) == 2) as usize;
        }
    }
    a
}

/// Eviction list for a pair, built the same way an attacker would.
pub fn evict_list(s: &mut Session, p: &PairInfo) -> Vec<u64> {
    let mut ev = s.ev.clone().unwrap();
    let mut v = ev.llc_set(&mut s.m, p.a).unwrap().members;
    v.extend(ev.llc_set(&mut s.m, p.b).unwrap().members);
    v.extend(ev.tlb_set(&s.m, p.a).unwrap().members);
    v.extend(ev.tlb_set(&s.m, p.b).unwrap().members);
    s.ev = Some(ev);
    v
}

/// Simulated-clock cost of `n` rounds after `warm` unmeasured ones.
pub fn round_costs(s: &mut Session, p: &PairInfo, pad: u64, warm: usize, n: usize) -> Vec<u64> {
    let ev = evict_list(s, p);
    let mut out = Vec::new();
    for i in 0..warm + n {
        let t0 = s.m.now();
        pthammer_round(&mut s.m, &ev, p.a, p.b, pad).unwrap();
        if i >= warm {
            out.push(s.m.now() - t0);
        }
    }
    out
}

pub struct TimingGate {
    pub within: usize,
    pub measured: usize,
    pub first_flip: Option<u64>,
    pub padded_min_cost: u64,
    pub padded_rounds: u64,
    pub padded_flips: usize,
}

/// Steady-state round costs, then the padded run over ten times the
/// unpadded first-flip budget.
pub fn timing_gate(preset_name: &str, mode: PageMode, limit: u64) -> TimingGate {
    let mut sc = Config::from_preset(preset_name).unwrap();
    sc.attack.mode = mode;
    sc.attack.stop_at_exploitable = false;
    let mut s = Session::setup(&sc).unwrap();
    let tries = (s.spray_bytes >> 21) as usize;
    let pair = s.pick_hammer_pair(tries).unwrap();
    let base = s.clone();

    let costs = round_costs(&mut s, &pair, 0, 10, 50);
    let within = costs.iter().filter(|&&c| c <= limit).count();
    let mut s = base.clone();
    let r = s.hammer(pair, sc.attack.budget).unwrap();
    let first_flip = r.first_flip_round;

    let mut padded = base;
    let pad = limit + 1 - costs.iter().min().unwrap() + 50;
    let padded_min_cost = *round_costs(&mut padded.clone(), &pair, pad, 2, 20).iter().min().unwrap();
    let budget = 10 * first_flip.unwrap_or(sc.attack.budget);
    padded.sc.attack.pad_cycles = pad;
    let before = padded.m.flips().len();
    let r = padded.hammer(pair, budget).unwrap();
    TimingGate {
        within,
        measured: costs.len(),
        first_flip,
        padded_min_cost,
        padded_rounds: r.rounds,
        padded_flips: padded.m.flips().len() - before,
    }
}

/// Desk end-to-end run with the independent checks attached.
pub struct EndToEnd {
    pub report: HammerReport,
    pub l1_row_flips: usize,
    pub causality: bool,
    pub direct_table_accesses: u64,
}

pub fn end_to_end(sc: &Config) -> EndToEnd {
    let mut s = instrumented(sc);
    let report = s.run().unwrap();
    let l1: std::collections::HashSet<(u64, u64)> =
        s.m.l1_tables().iter().map(|&(f, _)| bank_row(s.m.config(), f * 4096)).collect();
    let l1_row_flips = s.m.flips().iter().filter(|f| l1.contains(&(f.event.bank as u64, f.event.row as u64))).count();
    EndToEnd {
        l1_row_flips,
        causality: causality_oracle(&s.m),
        direct_table_accesses: s.m.audit().direct_table_accesses,
        report,
    }
}

/// Level-1 entry frame-bit flips, as (old frame, new frame).
pub fn l1_frame_flips(s: &Session) -> Vec<(u64, u64)> {
    s.m.flips()
        .iter()
        .filter(|f| f.table_level == Some(1))
        .filter_map(|f| {
            let (pte, bit) = (f.pte_before?, f.pte_bit?);
            if pte & 1 == 0 || !(12..52).contains(&bit) {
                return None;
            }
            let after = pte ^ (1u64 << bit);
            Some(((pte >> 12) & ((1 << 40) - 1), (after >> 12) & ((1 << 40) - 1)))
        })
        .collect()
}
