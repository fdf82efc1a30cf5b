//! Visiting order for the sprayer robot.
//!
//! Routes start at the robot position and, by default, end wherever the last
//! target is. The improver works on a cycle: for an open route a dummy node
//! at distance zero from everything is appended and its edge to the start is
//! pinned, so every cycle through it is an open path from the start.

use crate::geo::LocalPoint;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Largest instance the exhaustive search accepts.
pub const BRUTE_FORCE_MAX: usize = 10;

const EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("exhaustive search supports at most {max} targets, got {n}")]
    TooManyTargets { n: usize, max: usize },
    #[error("non-finite coordinate at target {0}")]
    NonFinite(usize),
    #[error("tour does not match the target list: {0}")]
    InvalidTour(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub start: LocalPoint,
    /// Target indices in visiting order.
    pub order: Vec<usize>,
    /// Target positions in visiting order.
    pub waypoints: Vec<LocalPoint>,
    pub length_m: f64,
    pub return_to_start: bool,
}

impl Tour {
    pub fn from_order(
        start: LocalPoint,
        targets: &[LocalPoint],
        order: Vec<usize>,
        return_to_start: bool,
    ) -> Tour {
        let waypoints: Vec<LocalPoint> = order.iter().map(|&i| targets[i]).collect();
        let mut tour = Tour {
            start,
            order,
            waypoints,
            length_m: 0.0,
            return_to_start,
        };
        tour.length_m = tour_length(&tour);
        tour
    }

    pub fn is_permutation_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        self.order.len() == n
            && self.order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
    }
}

/// Sum of leg lengths from the start through every waypoint.
pub fn tour_length(tour: &Tour) -> f64 {
    let mut len = 0.0;
    let mut at = tour.start;
    for p in &tour.waypoints {
        len += at.distance(p);
        at = *p;
    }
    if tour.return_to_start {
        len += at.distance(&tour.start);
    }
    len
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouteConfig {
    pub return_to_start: bool,
    /// Maximum number of sequential exchanges in one improving move.
    pub max_depth: usize,
    /// Nearest neighbours considered per node.
    pub candidates: usize,
    /// Wall-clock limit; `None` runs to a local optimum.
    pub time_budget_ms: Option<u64>,
}

impl Default for RouteConfig {
    fn default() -> Self {
        Self {
            return_to_start: false,
            max_depth: 5,
            candidates: 8,
            time_budget_ms: None,
        }
    }
}

impl RouteConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_depth == 0 {
            return Err("max_depth must be >= 1".into());
        }
        if self.candidates == 0 {
            return Err("candidates must be >= 1".into());
        }
        Ok(())
    }
}

fn check_finite(start: &LocalPoint, targets: &[LocalPoint]) -> Result<(), RouteError> {
    if !start.is_finite() {
        return Err(RouteError::NonFinite(usize::MAX));
    }
    match targets.iter().position(|t| !t.is_finite()) {
        Some(i) => Err(RouteError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Greedy construction: always go to the closest unvisited target.
pub fn nearest_neighbor(start: LocalPoint, targets: &[LocalPoint], return_to_start: bool) -> Tour {
    let n = targets.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut at = start;
    for _ in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in targets.iter().enumerate() {
            if visited[i] {
                continue;
            }
            let d = at.distance(t);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("unvisited target remains");
        visited[i] = true;
        order.push(i);
        at = targets[i];
    }
    Tour::from_order(start, targets, order, return_to_start)
}

/// Exhaustive search. Equal-length tours resolve to the lexicographically
/// smallest order.
pub fn brute_force_optimal(
    start: LocalPoint,
    targets: &[LocalPoint],
    return_to_start: bool,
) -> Result<Tour, RouteError> {
    let n = targets.len();
    if n > BRUTE_FORCE_MAX {
        return Err(RouteError::TooManyTargets { n, max: BRUTE_FORCE_MAX });
    }
    check_finite(&start, targets)?;
    struct Search<'a> {
        start: LocalPoint,
        targets: &'a [LocalPoint],
        closed: bool,
        used: Vec<bool>,
        cur: Vec<usize>,
        best: Vec<usize>,
        best_len: f64,
    }
    impl Search<'_> {
        fn dfs(&mut self, at: LocalPoint, len: f64) {
            if len >= self.best_len - EPS {
                return;
            }
            if self.cur.len() == self.targets.len() {
                let total = if self.closed { len + at.distance(&self.start) } else { len };
                if total < self.best_len - EPS {
                    self.best_len = total;
                    self.best.clone_from(&self.cur);
                }
                return;
            }
            for i in 0..self.targets.len() {
                if self.used[i] {
                    continue;
                }
                self.used[i] = true;
                self.cur.push(i);
                let next = self.targets[i];
                self.dfs(next, len + at.distance(&next));
                self.cur.pop();
                self.used[i] = false;
            }
        }
    }
    let mut s = Search {
        start,
        targets,
        closed: return_to_start,
        used: vec![false; n],
        cur: Vec::with_capacity(n),
        best: Vec::new(),
        best_len: f64::INFINITY,
    };
    s.dfs(start, 0.0);
    Ok(Tour::from_order(start, targets, s.best, return_to_start))
}

/// Node 0 is the start, 1..=n the targets, n+1 the zero-distance dummy of an
/// open route.
struct Graph {
    pts: Vec<LocalPoint>,
    dummy: Option<usize>,
    cand: Vec<Vec<usize>>,
}

impl Graph {
    fn new(start: LocalPoint, targets: &[LocalPoint], open: bool, k: usize) -> Graph {
        let mut pts = Vec::with_capacity(targets.len() + 2);
        pts.push(start);
        pts.extend_from_slice(targets);
        let real = pts.len();
        let dummy = open.then_some(real);
        let mut cand = Vec::with_capacity(real + 1);
        for a in 0..real {
            let mut others: Vec<usize> = (0..real).filter(|&b| b != a).collect();
            let key = |b: &usize| (pts[a].distance(&pts[*b]), *b);
            if others.len() > k {
                others.select_nth_unstable_by(k, |x, y| key(x).partial_cmp(&key(y)).unwrap());
                others.truncate(k);
            }
            others.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            if let Some(z) = dummy {
                others.insert(0, z);
            }
            cand.push(others);
        }
        if dummy.is_some() {
            // everything is at distance zero from the dummy
            cand.push((0..real).collect());
        }
        Graph { pts, dummy, cand }
    }

    fn len(&self) -> usize {
        self.pts.len() + usize::from(self.dummy.is_some())
    }

    fn d(&self, a: usize, b: usize) -> f64 {
        if Some(a) == self.dummy || Some(b) == self.dummy {
            0.0
        } else {
            self.pts[a].distance(&self.pts[b])
        }
    }

    fn pinned(&self, a: usize, b: usize) -> bool {
        match self.dummy {
            Some(z) => (a == 0 && b == z) || (a == z && b == 0),
            None => false,
        }
    }

    fn cycle_length(&self, tour: &[usize]) -> f64 {
        let m = tour.len();
        (0..m).map(|i| self.d(tour[i], tour[(i + 1) % m])).sum()
    }

    /// Rotates so the start is first and, for open routes, the dummy last.
    fn normalize(&self, tour: &mut [usize]) {
        let p = tour.iter().position(|&v| v == 0).expect("start node present");
        tour.rotate_left(p);
        if let Some(z) = self.dummy {
            if tour[tour.len() - 1] != z {
                tour[1..].reverse();
            }
        }
    }
}

struct Clock {
    deadline: Option<Instant>,
}

impl Clock {
    fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

/// One improving move starting by breaking the edge between `t1` and its
/// neighbour on the `forward` side. The resulting Hamiltonian path has a free
/// head and `t1` as its tail; each step joins the head to a candidate `c` and
/// drops the edge in front of `c`, which is a prefix reversal. The best
/// closing seen within `max_depth` steps is committed.
fn lk_move(g: &Graph, tour: &mut Vec<usize>, t1: usize, forward: bool, max_depth: usize) -> Option<Vec<usize>> {
    let m = tour.len();
    let p = tour.iter().position(|&v| v == t1)?;
    let mut base: Vec<usize> = (1..=m).map(|k| tour[(p + k) % m]).collect();
    if !forward {
        // head is the predecessor of t1, tail stays t1
        base.pop();
        base.reverse();
        base.push(t1);
    }
    let t2 = base[0];
    if g.pinned(t1, t2) {
        return None;
    }
    let mut pos = vec![0usize; m];
    for &c1 in &g.cand[t2] {
        let mut path = base.clone();
        for (i, &v) in path.iter().enumerate() {
            pos[v] = i;
        }
        let mut gain = g.d(t1, t2);
        let mut best_gain = EPS;
        let mut best: Option<Vec<usize>> = None;
        let mut touched = vec![t1, t2];
        for depth in 0..max_depth {
            let head = path[0];
            let admissible = |c: usize| {
                let j = pos[c];
                j >= 2 && j < m - 1 && !g.pinned(path[j - 1], c) && gain - g.d(head, c) > EPS
            };
            let pick = if depth == 0 {
                admissible(c1).then_some(c1)
            } else {
                g.cand[head]
                    .iter()
                    .copied()
                    .filter(|&c| admissible(c))
                    .map(|c| (c, gain - g.d(head, c) + g.d(path[pos[c] - 1], c)))
                    .fold(None, |acc: Option<(usize, f64)>, x| match acc {
                        Some(a) if a.1 >= x.1 => Some(a),
                        _ => Some(x),
                    })
                    .map(|(c, _)| c)
            };
            let Some(c) = pick else { break };
            let j = pos[c];
            gain += g.d(path[j - 1], c) - g.d(head, c);
            path[..j].reverse();
            for (i, &v) in path[..j].iter().enumerate() {
                pos[v] = i;
            }
            touched.extend([head, c, path[0]]);
            let closed = gain - g.d(path[0], path[m - 1]);
            if closed > best_gain {
                best_gain = closed;
                best = Some(path.clone());
            }
        }
        if let Some(b) = best {
            *tour = b;
            return Some(touched);
        }
    }
    None
}

/// Moves runs of one to three nodes elsewhere, possibly reversed.
fn or_opt_pass(g: &Graph, tour: &mut Vec<usize>, clock: &Clock) -> bool {
    let m = tour.len();
    // start pinned at 0, and for open routes the dummy at m - 1
    let last = if g.dummy.is_some() { m - 2 } else { m - 1 };
    let mut improved = false;
    for seg in 1..=3usize {
        let mut i = 1;
        while i + seg - 1 <= last {
            if clock.expired() {
                return improved;
            }
            let (s1, s2) = (tour[i], tour[i + seg - 1]);
            let (prev, next) = (tour[i - 1], tour[(i + seg) % m]);
            let removal = g.d(prev, s1) + g.d(s2, next) - g.d(prev, next);
            let mut best: Option<(usize, bool, f64)> = None;
            for k in 0..m {
                // insertion edge (tour[k], tour[k + 1]) must lie outside the run
                if k + 1 >= i && k < i + seg {
                    continue;
                }
                if k == m - 1 && g.dummy.is_some() {
                    continue;
                }
                let (a, b) = (tour[k], tour[(k + 1) % m]);
                let fwd = g.d(a, s1) + g.d(s2, b) - g.d(a, b);
                let rev = g.d(a, s2) + g.d(s1, b) - g.d(a, b);
                let (cost, reversed) = if rev < fwd { (rev, true) } else { (fwd, false) };
                let delta = cost - removal;
                if delta < -EPS && best.is_none_or(|(_, _, bd)| delta < bd) {
                    best = Some((k, reversed, delta));
                }
            }
            if let Some((k, reversed, _)) = best {
                let mut run: Vec<usize> = tour.drain(i..i + seg).collect();
                if reversed {
                    run.reverse();
                }
                let at = if k < i { k + 1 } else { k + 1 - seg };
                tour.splice(at..at, run);
                improved = true;
            } else {
                i += 1;
            }
        }
    }
    improved
}

/// Applies improving segment reversals until none remain.
fn two_opt(g: &Graph, tour: &mut [usize], clock: &Clock) -> bool {
    let m = tour.len();
    let open = g.dummy.is_some();
    let mut any = false;
    loop {
        let mut improved = false;
        for i in 0..m.saturating_sub(2) {
            if clock.expired() {
                return any;
            }
            let jmax = if open { m - 2 } else { m - 1 };
            for j in (i + 2)..=jmax {
                if !open && i == 0 && j == m - 1 {
                    continue;
                }
                let (a, b, c, e) = (tour[i], tour[i + 1], tour[j], tour[(j + 1) % m]);
                let delta = g.d(a, c) + g.d(b, e) - g.d(a, b) - g.d(c, e);
                if delta < -EPS {
                    tour[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        any |= improved;
        if !improved {
            return any;
        }
    }
}

/// Improves a tour with sequential edge exchanges, segment moves and a final
/// 2-opt sweep. Never returns a longer tour than the input.
pub fn improve(tour: &Tour, targets: &[LocalPoint], cfg: &RouteConfig) -> Result<Tour, RouteError> {
    let n = targets.len();
    if !tour.is_permutation_of(n) {
        return Err(RouteError::InvalidTour(format!(
            "order is not a permutation of 0..{n}"
        )));
    }
    check_finite(&tour.start, targets)?;
    let original = Tour::from_order(tour.start, targets, tour.order.clone(), tour.return_to_start);
    if n < 2 {
        return Ok(original);
    }
    let clock = Clock {
        deadline: cfg.time_budget_ms.map(|ms| Instant::now() + Duration::from_millis(ms)),
    };
    let g = Graph::new(tour.start, targets, !tour.return_to_start, cfg.candidates.max(1));
    let m = g.len();
    let mut cyc: Vec<usize> = std::iter::once(0).chain(tour.order.iter().map(|&i| i + 1)).collect();
    if let Some(z) = g.dummy {
        cyc.push(z);
    }

    loop {
        let before = g.cycle_length(&cyc);
        let mut queue: VecDeque<usize> = cyc.iter().copied().collect();
        let mut queued = vec![true; m];
        while let Some(t1) = queue.pop_front() {
            if clock.expired() {
                break;
            }
            queued[t1] = false;
            let touched = lk_move(&g, &mut cyc, t1, true, cfg.max_depth.max(1))
                .or_else(|| lk_move(&g, &mut cyc, t1, false, cfg.max_depth.max(1)));
            if let Some(nodes) = touched {
                for v in nodes {
                    if !std::mem::replace(&mut queued[v], true) {
                        queue.push_back(v);
                    }
                }
            }
        }
        g.normalize(&mut cyc);
        or_opt_pass(&g, &mut cyc, &clock);
        two_opt(&g, &mut cyc, &clock);
        if clock.expired() || g.cycle_length(&cyc) >= before - EPS {
            break;
        }
    }

    let order: Vec<usize> = cyc
        .iter()
        .copied()
        .filter(|&v| v != 0 && Some(v) != g.dummy)
        .map(|v| v - 1)
        .collect();
    let result = Tour::from_order(tour.start, targets, order, tour.return_to_start);
    Ok(if result.length_m <= original.length_m { result } else { original })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[(f64, f64)]) -> Vec<LocalPoint> {
        v.iter().map(|&(e, n)| LocalPoint::new(e, n)).collect()
    }

    fn random_instance(seed: u64, n: usize, side: f64) -> Vec<LocalPoint> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| LocalPoint::new(r.random_range(0.0..side), r.random_range(0.0..side)))
            .collect()
    }

    #[test]
    fn empty_and_single() {
        let t = nearest_neighbor(LocalPoint::ORIGIN, &[], false);
        assert!(t.order.is_empty());
        assert_eq!(t.length_m, 0.0);
        let one = pts(&[(3.0, 4.0)]);
        let t = nearest_neighbor(LocalPoint::ORIGIN, &one, false);
        assert_eq!(t.length_m, 5.0);
        assert_eq!(brute_force_optimal(LocalPoint::ORIGIN, &one, false).unwrap().order, vec![0]);
    }

    #[test]
    fn nn_collinear() {
        let t = nearest_neighbor(LocalPoint::ORIGIN, &pts(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]), false);
        assert_eq!(t.order, vec![0, 1, 2]);
        assert!((t.length_m - 3.0).abs() < 1e-12);
        let improved = improve(&t, &t.waypoints, &RouteConfig::default()).unwrap();
        assert_eq!(improved.order, t.order);
    }

    #[test]
    fn nn_greedy_trace() {
        let targets = pts(&[(1.0, 0.0), (-1.1, 0.0), (2.0, 0.0)]);
        let t = nearest_neighbor(LocalPoint::ORIGIN, &targets, false);
        assert_eq!(t.order, vec![0, 2, 1]);
        assert!((t.length_m - 5.1).abs() < 1e-12);
        // going left first is 1.1 + 2.1 + 1 = 4.2
        let opt = brute_force_optimal(LocalPoint::ORIGIN, &targets, false).unwrap();
        assert_eq!(opt.order, vec![1, 0, 2]);
        let imp = improve(&t, &targets, &RouteConfig::default()).unwrap();
        assert!((imp.length_m - 4.2).abs() < 1e-9);
    }

    #[test]
    fn nn_ties_take_lowest_index() {
        let t = nearest_neighbor(LocalPoint::ORIGIN, &pts(&[(-1.0, 0.0), (1.0, 0.0)]), false);
        assert_eq!(t.order, vec![0, 1]);
    }

    #[test]
    fn crossing_path_uncrossed() {
        let targets = pts(&[(1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]);
        let crossed = Tour::from_order(LocalPoint::ORIGIN, &targets, vec![0, 1, 2], false);
        assert!((crossed.length_m - (2.0 * 2f64.sqrt() + 1.0)).abs() < 1e-12);
        let imp = improve(&crossed, &targets, &RouteConfig::default()).unwrap();
        assert!(imp.length_m < crossed.length_m);
        assert!((imp.length_m - 3.0).abs() < 1e-9);
    }

    #[test]
    fn brute_force_limits_and_ties() {
        let many = random_instance(1, 11, 10.0);
        assert_eq!(
            brute_force_optimal(LocalPoint::ORIGIN, &many, false),
            Err(RouteError::TooManyTargets { n: 11, max: 10 })
        );
        // both orders cost 3; lexicographic order wins
        let t = brute_force_optimal(LocalPoint::ORIGIN, &pts(&[(1.0, 0.0), (-1.0, 0.0)]), false).unwrap();
        assert_eq!(t.order, vec![0, 1]);
    }

    #[test]
    fn eight_targets_near_oracle() {
        let mut within = 0;
        for seed in 0..100 {
            let targets = random_instance(seed, 8, 50.0);
            let nn = nearest_neighbor(LocalPoint::ORIGIN, &targets, false);
            let imp = improve(&nn, &targets, &RouteConfig::default()).unwrap();
            let opt = brute_force_optimal(LocalPoint::ORIGIN, &targets, false).unwrap();
            assert!(imp.length_m <= nn.length_m + 1e-9);
            assert!(opt.length_m <= imp.length_m + 1e-9);
            assert!(imp.is_permutation_of(8));
            if imp.length_m <= 1.05 * opt.length_m {
                within += 1;
            }
        }
        assert!(within >= 95, "{within}/100 within 5%");
    }

    #[test]
    fn closed_routes_near_oracle() {
        let mut within = 0;
        for seed in 0..30 {
            let targets = random_instance(500 + seed, 8, 30.0);
            let nn = nearest_neighbor(LocalPoint::new(15.0, -5.0), &targets, true);
            let imp = improve(&nn, &targets, &RouteConfig::default()).unwrap();
            let opt = brute_force_optimal(nn.start, &targets, true).unwrap();
            assert!(imp.length_m <= nn.length_m + 1e-9);
            if imp.length_m <= 1.05 * opt.length_m {
                within += 1;
            }
        }
        assert!(within >= 28, "{within}/30");
    }

    #[test]
    fn larger_instance_is_two_opt_stable() {
        let targets = random_instance(99, 200, 100.0);
        let nn = nearest_neighbor(LocalPoint::ORIGIN, &targets, false);
        let imp = improve(&nn, &targets, &RouteConfig::default()).unwrap();
        assert!(imp.length_m < nn.length_m);
        let mut path = vec![LocalPoint::ORIGIN];
        path.extend(&imp.waypoints);
        for i in 0..path.len() - 1 {
            for j in i + 2..path.len() - 1 {
                let delta = path[i].distance(&path[j]) + path[i + 1].distance(&path[j + 1])
                    - path[i].distance(&path[i + 1])
                    - path[j].distance(&path[j + 1]);
                assert!(delta > -1e-9, "improving 2-opt move at {i},{j}");
            }
            // reversing the tail is free at the open end
            let tail = path[i].distance(path.last().unwrap()) - path[i].distance(&path[i + 1]);
            assert!(tail > -1e-9);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let targets = pts(&[(1.0, 0.0), (2.0, 0.0)]);
        let mut t = nearest_neighbor(LocalPoint::ORIGIN, &targets, false);
        t.order = vec![0, 0];
        assert!(matches!(improve(&t, &targets, &RouteConfig::default()), Err(RouteError::InvalidTour(_))));
    }

    fn arb_targets() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 0..9)
    }

    proptest! {
        #[test]
        fn improve_is_monotone_permutation(v in arb_targets(), closed in any::<bool>()) {
            let targets = pts(&v);
            let nn = nearest_neighbor(LocalPoint::ORIGIN, &targets, closed);
            let imp = improve(&nn, &targets, &RouteConfig::default()).unwrap();
            prop_assert!(imp.is_permutation_of(targets.len()));
            prop_assert!(imp.length_m <= nn.length_m);
            prop_assert!((tour_length(&imp) - imp.length_m).abs() < 1e-9);
            if targets.len() <= 7 {
                let opt = brute_force_optimal(LocalPoint::ORIGIN, &targets, closed).unwrap();
                prop_assert!(opt.length_m <= imp.length_m + 1e-9);
            }
        }

        #[test]
        fn length_invariant_under_rigid_motion(
            v in arb_targets(), dx in -500.0..500.0f64, dy in -500.0..500.0f64, th in 0.0..6.3f64,
        ) {
            let targets = pts(&v);
            let (s, c) = th.sin_cos();
            let moved: Vec<LocalPoint> = targets
                .iter()
                .map(|p| LocalPoint::new(c * p.east_m - s * p.north_m + dx, s * p.east_m + c * p.north_m + dy))
                .collect();
            let start = LocalPoint::new(dx, dy);
            let order: Vec<usize> = (0..targets.len()).collect();
            let a = Tour::from_order(LocalPoint::ORIGIN, &targets, order.clone(), false);
            let b = Tour::from_order(start, &moved, order, false);
            prop_assert!((a.length_m - b.length_m).abs() < 1e-8);
            if targets.len() <= 6 {
                let oa = brute_force_optimal(LocalPoint::ORIGIN, &targets, false).unwrap();
                let ob = brute_force_optimal(start, &moved, false).unwrap();
                prop_assert!((oa.length_m - ob.length_m).abs() < 1e-8);
            }
        }
    }
}
