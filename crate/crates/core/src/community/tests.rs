use super::*;
use rand::Rng;

fn ids(n: usize) -> Vec<NodeId> {
    (0..n).map(|i| NodeId::derive(Label::Entity, &format!("n{i}"))).collect()
}

fn graph(n: usize, edges: &[(usize, usize)]) -> WeightedGraph {
    WeightedGraph { nodes: ids(n), edges: edges.iter().map(|&(a, b)| (a, b, 1.0)).collect() }
}

/// Straight from the definition: (1/2m) sum_ij [A_ij - g k_i k_j / 2m] d(c_i, c_j).
fn dense_modularity(g: &WeightedGraph, part: &[usize], gamma: f64) -> f64 {
    let n = g.nodes.len();
    let mut a = vec![vec![0.0; n]; n];
    for &(x, y, w) in &g.edges {
        a[x][y] += w;
        a[y][x] += w;
    }
    let k: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if part[i] == part[j] {
                q += a[i][j] - gamma * k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// All set partitions of n elements as restricted growth strings.
fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for c in 0..=max + 1 {
            prefix.push(c);
            rec(prefix, max.max(c), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        let mut prefix = vec![0];
        rec(&mut prefix, 0, n, &mut out);
    }
    out
}

fn best_modularity(g: &WeightedGraph, gamma: f64) -> f64 {
    set_partitions(g.nodes.len())
        .iter()
        .map(|p| dense_modularity(g, p, gamma))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn is_connected_within(g: &WeightedGraph, part: &[usize], community: usize) -> bool {
    let members: Vec<usize> = (0..part.len()).filter(|i| part[*i] == community).collect();
    let mut seen = BTreeSet::from([members[0]]);
    let mut queue = VecDeque::from([members[0]]);
    while let Some(v) = queue.pop_front() {
        for &(a, b, _) in &g.edges {
            let other = if a == v { b } else if b == v { a } else { continue };
            if part[other] == community && seen.insert(other) {
                queue.push_back(other);
            }
        }
    }
    seen.len() == members.len()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> WeightedGraph {
    let p: f64 = rng.random_range(0.2..0.7);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    graph(n, &edges)
}

#[test]
fn bell_numbers() {
    assert_eq!(set_partitions(4).len(), 15);
    assert_eq!(set_partitions(8).len(), 4140);
}

#[test]
fn two_disjoint_cliques() {
    let mut edges = Vec::new();
    for base in [0, 4] {
        for a in 0..4 {
            for b in a + 1..4 {
                edges.push((base + a, base + b));
            }
        }
    }
    let g = graph(8, &edges);
    let out = leiden(&g, &LeidenConfig::default()).unwrap();
    let top = out.top();
    assert_eq!(top.iter().collect::<BTreeSet<_>>().len(), 2);
    assert!(top[..4].iter().all(|c| *c == top[0]));
    assert!(top[4..].iter().all(|c| *c == top[4]));
    assert_ne!(top[0], top[4]);
}

#[test]
fn triangle_is_one_community_with_zero_modularity() {
    let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
    let out = leiden(&g, &LeidenConfig::default()).unwrap();
    assert_eq!(out.top(), &[0, 0, 0]);
    let q = *out.qualities.last().unwrap();
    assert!((q - dense_modularity(&g, &[0, 0, 0], 1.0)).abs() < 1e-9);
    assert!(q.abs() < 1e-9);
}

#[test]
fn empty_graph_and_bad_config_are_errors() {
    assert!(matches!(leiden(&WeightedGraph::default(), &LeidenConfig::default()), Err(CommunityError::EmptyGraph)));
    let g = graph(2, &[(0, 1)]);
    let bad = LeidenConfig { resolution: 0.0, ..LeidenConfig::default() };
    assert!(matches!(leiden(&g, &bad), Err(CommunityError::InvalidResolution(_))));
}

#[test]
fn edgeless_graph_keeps_singletons() {
    let out = leiden(&graph(3, &[]), &LeidenConfig::default()).unwrap();
    assert_eq!(out.top(), &[0, 1, 2]);
    assert_eq!(out.qualities, vec![0.0]);
}

#[test]
fn implementation_modularity_matches_dense_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(2..=8);
        let g = random_graph(&mut rng, n);
        let part: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        for gamma in [0.5, 1.0, 2.0] {
            assert!((modularity(&g, &part, gamma) - dense_modularity(&g, &part, gamma)).abs() < 1e-9);
        }
    }
}

#[test]
fn exhaustive_oracle_on_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 200;
    let mut optimal = 0;
    let mut below = Vec::new();
    for trial in 0..trials {
        let n = rng.random_range(2..=8);
        let g = random_graph(&mut rng, n);
        let cfg = LeidenConfig { seed: trial, ..LeidenConfig::default() };
        let out = leiden(&g, &cfg).unwrap();
        let q = dense_modularity(&g, out.top(), 1.0);
        let best = best_modularity(&g, 1.0);
        assert!(q <= best + 1e-9);
        if q >= best - 1e-9 {
            optimal += 1;
        }
        if q < 0.9 * best - 1e-9 {
            below.push((trial, n, g.edges.len(), q, best));
        }
    }
    assert!(below.is_empty(), "below 0.9x optimum: {below:?} (optimal {optimal})");
    assert!(optimal * 100 >= trials * 95, "optimal in {optimal}/{trials}");
}

#[test]
fn structural_invariants_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..60 {
        let n = rng.random_range(5..=40);
        let g = random_graph(&mut rng, n);
        let cfg = LeidenConfig { seed: trial, max_levels: 5, ..LeidenConfig::default() };
        let out = leiden(&g, &cfg).unwrap();
        for level in &out.levels {
            for c in level.iter().collect::<BTreeSet<_>>() {
                assert!(is_connected_within(&g, level, *c), "trial {trial}: community {c} disconnected");
            }
        }
        for pair in out.levels.windows(2) {
            // every fine community sits inside one coarse community
            let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
            for (fine, coarse) in pair[0].iter().zip(&pair[1]) {
                assert_eq!(*parent.entry(*fine).or_insert(*coarse), *coarse);
            }
        }
        for w in out.q_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "trial {trial}: trace {:?}", out.q_trace);
        }
        let again = leiden(&g, &cfg).unwrap();
        assert_eq!(again.levels, out.levels);
    }
}

#[test]
fn resolution_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 12;
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    for _ in 0..10 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a, b));
        }
    }
    let g = graph(n, &edges);
    let huge = leiden(&g, &LeidenConfig { resolution: 1e6, ..LeidenConfig::default() }).unwrap();
    assert_eq!(huge.top().iter().collect::<BTreeSet<_>>().len(), n);
    let tiny = leiden(&g, &LeidenConfig { resolution: 1e-6, ..LeidenConfig::default() }).unwrap();
    assert!(tiny.top().iter().all(|c| *c == 0));
}

#[test]
fn max_levels_keeps_the_converged_top() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_graph(&mut rng, 40);
    let full = leiden(&g, &LeidenConfig { max_levels: 10, ..LeidenConfig::default() }).unwrap();
    let one = leiden(&g, &LeidenConfig { max_levels: 1, ..LeidenConfig::default() }).unwrap();
    assert_eq!(one.levels.len(), 1);
    assert_eq!(one.top(), full.top());
}

#[test]
fn assignment_numbers_by_smallest_member_and_adds_root() {
    let g = graph(3, &[(0, 1)]);
    let root = NodeId::user_root();
    let a = to_assignment(&g, &[1, 1, 0], Some(root));
    assert_eq!(a.len(), 4);
    let distinct: BTreeSet<u32> = a.values().copied().collect();
    assert_eq!(distinct, BTreeSet::from([0, 1, 2]));
    assert_eq!(a[&g.nodes[0]], a[&g.nodes[1]]);
    assert_ne!(a[&root], a[&g.nodes[2]]);
}
