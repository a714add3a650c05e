#ifndef PNR_TESTS_HDBSCAN_REFERENCE_HPP
#define PNR_TESTS_HDBSCAN_REFERENCE_HPP

// Brute-force density clustering oracle. Instead of an MST + union-find it
// builds the tied single-linkage hierarchy top-down: the split weight of a
// component is the smallest connectivity threshold, and the children are the
// connected components strictly below it. Everything downstream (condense,
// stability, excess-of-mass, epsilon merging) is rederived here from the
// documented rules. Raw point distances come from pair_distance so both
// sides see bit-identical geometry.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pnr/hdbscan.hpp"

namespace pnr::test {

struct RefResult {
  CondensedTree tree;
  std::vector<int> selected;         // condensed ids, ascending
  std::vector<int32_t> assignments;  // compact id or kNoise
};

namespace detail {

struct RefHierNode {
  double weight = 0.0;
  std::vector<int> children;   // ids into the node vector; ids < n are points
  std::vector<int> points;     // every point under this node, ascending
};

struct RefHierarchy {
  int n = 0;
  std::vector<RefHierNode> nodes;
  int root = -1;

  const std::vector<int>& points_of(int id, std::vector<int>& single) const {
    if (id < n) {
      single = {id};
      return single;
    }
    return nodes[id].points;
  }
  int size_of(int id) const { return id < n ? 1 : static_cast<int>(nodes[id].points.size()); }
  int min_point_of(int id) const { return id < n ? id : nodes[id].points.front(); }
};

inline bool connected_under(const Eigen::MatrixXd& reach, const std::vector<int>& pts,
                            double w, bool strict, std::vector<std::vector<int>>* components) {
  const int m = static_cast<int>(pts.size());
  std::vector<char> seen(m, 0);
  if (components) components->clear();
  int covered = 0;
  for (int start = 0; start < m; ++start) {
    if (seen[start]) continue;
    std::vector<int> comp;
    std::vector<int> queue{start};
    seen[start] = 1;
    while (!queue.empty()) {
      const int u = queue.back();
      queue.pop_back();
      comp.push_back(pts[u]);
      for (int v = 0; v < m; ++v) {
        if (seen[v]) continue;
        const double d = reach(pts[u], pts[v]);
        if (strict ? d < w : d <= w) {
          seen[v] = 1;
          queue.push_back(v);
        }
      }
    }
    covered += static_cast<int>(comp.size());
    if (components) {
      std::sort(comp.begin(), comp.end());
      components->push_back(std::move(comp));
    } else if (covered < m && start == 0) {
      return false;  // only connectivity was asked for
    }
  }
  if (components)
    std::sort(components->begin(), components->end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return covered == m;
}

inline int build_ref_hierarchy(const Eigen::MatrixXd& reach, std::vector<int> pts,
                               RefHierarchy& h) {
  if (pts.size() == 1) return pts[0];

  std::vector<double> weights;
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) weights.push_back(reach(pts[i], pts[j]));
  std::sort(weights.begin(), weights.end());
  weights.erase(std::unique(weights.begin(), weights.end()), weights.end());

  // Connectivity at threshold w is monotone in w, so the smallest connecting
  // weight can be found by bisection over the distinct weights.
  size_t lo = 0, hi = weights.size() - 1;
  while (lo < hi) {
    const size_t mid = (lo + hi) / 2;
    if (connected_under(reach, pts, weights[mid], false, nullptr))
      hi = mid;
    else
      lo = mid + 1;
  }
  const double split_w = weights[lo];

  std::vector<std::vector<int>> components;
  connected_under(reach, pts, split_w, true, &components);

  RefHierNode node;
  node.weight = split_w;
  node.points = pts;
  std::sort(node.points.begin(), node.points.end());
  std::vector<int> child_ids;
  for (auto& comp : components) child_ids.push_back(build_ref_hierarchy(reach, comp, h));
  node.children = std::move(child_ids);
  const int id = static_cast<int>(h.nodes.size());
  h.nodes.push_back(std::move(node));
  return id;
}

struct RefCondenser {
  const RefHierarchy& h;
  int mcs;
  CondensedTree tree;
  std::vector<int> fall_node;

  RefCondenser(const RefHierarchy& hier, int min_cluster_size)
      : h(hier), mcs(min_cluster_size), fall_node(hier.n, 0) {}

  void drop(int id, int k, double lam) {
    std::vector<int> single;
    for (int p : h.points_of(id, single)) {
      tree.nodes[k].fall_outs.emplace_back(p, lam);
      fall_node[p] = k;
    }
  }

  void walk(int id, int k) {
    const RefHierNode& node = h.nodes[id];
    const double lam = lambda_of(node.weight);
    std::vector<int> big;
    for (int c : node.children)
      if (h.size_of(c) >= mcs) big.push_back(c);
    std::sort(big.begin(), big.end(),
              [&](int a, int b) { return h.min_point_of(a) < h.min_point_of(b); });

    if (big.size() >= 2) {
      for (int c : node.children)
        if (h.size_of(c) < mcs) drop(c, k, lam);
      for (int c : big) {
        CondensedNode child;
        child.parent = k;
        child.lambda_birth = lam;
        child.size_at_birth = h.size_of(c);
        const int child_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(std::move(child));
        tree.nodes[k].children.push_back(child_id);
        walk(c, child_id);
      }
      return;
    }
    if (big.size() == 1) {
      for (int c : node.children)
        if (c != big[0]) drop(c, k, lam);
      walk(big[0], k);
      return;
    }
    for (int c : node.children) drop(c, k, lam);
  }

  CondensedTree run() {
    CondensedNode root;
    root.parent = -1;
    root.lambda_birth = 0.0;
    root.size_at_birth = h.size_of(h.root);
    tree.nodes.push_back(std::move(root));
    walk(h.root, 0);
    for (auto& node : tree.nodes)
      std::sort(node.fall_outs.begin(), node.fall_outs.end());
    return std::move(tree);
  }
};

// Returns (point, lambda at which it left node k) for all birth members.
inline std::vector<std::pair<int, double>> ref_stability(CondensedTree& tree, int k) {
  auto leaves = tree.nodes[k].fall_outs;
  for (int c : tree.nodes[k].children) {
    for (const auto& [p, lam] : ref_stability(tree, c))
      leaves.emplace_back(p, tree.nodes[c].lambda_birth);
  }
  std::sort(leaves.begin(), leaves.end());
  double s = 0.0;
  for (const auto& [p, lam] : leaves) s += lam - tree.nodes[k].lambda_birth;
  tree.nodes[k].stability = s;
  return leaves;
}

inline std::pair<double, std::vector<int>> ref_eom(const CondensedTree& tree, int k) {
  const auto& node = tree.nodes[k];
  if (node.children.empty())
    return {node.stability, k == 0 ? std::vector<int>{} : std::vector<int>{k}};
  double sum = 0.0;
  std::vector<int> picks;
  for (int c : node.children) {
    auto [v, p] = ref_eom(tree, c);
    sum += v;
    picks.insert(picks.end(), p.begin(), p.end());
  }
  if (k != 0 && node.stability > sum) return {node.stability, {k}};
  return {sum, picks};
}

inline double ref_birth_distance(const CondensedTree& tree, int k) {
  return k == 0 ? std::numeric_limits<double>::infinity() : 1.0 / tree.nodes[k].lambda_birth;
}

inline std::vector<std::vector<int>> ref_epsilon_groups(const CondensedTree& tree,
                                                        const std::vector<int>& selected,
                                                        double epsilon) {
  std::map<int, std::vector<int>> by_rep;
  for (int k : selected) {
    int rep = k;
    while (ref_birth_distance(tree, rep) < epsilon) rep = tree.nodes[rep].parent;
    by_rep[rep].push_back(k);
  }
  std::map<int, std::vector<int>> merged;
  for (const auto& [rep, group] : by_rep) {
    int top = rep;
    for (int a = tree.nodes[rep].parent; a >= 0; a = tree.nodes[a].parent)
      if (by_rep.count(a)) top = a;
    auto& dst = merged[top];
    dst.insert(dst.end(), group.begin(), group.end());
  }
  std::vector<std::vector<int>> out;
  for (auto& [rep, group] : merged) {
    std::sort(group.begin(), group.end());
    out.push_back(std::move(group));
  }
  return out;
}

}  // namespace detail

inline RefResult ref_hdbscan(const Eigen::MatrixXd& points, const HdbscanParams& params) {
  const int n = static_cast<int>(points.rows());

  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) dist(i, j) = dist(j, i) = pair_distance(points, i, j);

  const int k = std::min(params.min_samples, n - 1);
  Eigen::VectorXd core(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> row;
    for (int j = 0; j < n; ++j)
      if (j != i) row.push_back(dist(i, j));
    std::sort(row.begin(), row.end());
    core[i] = row[k - 1];
  }

  Eigen::MatrixXd reach = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) reach(i, j) = std::max({core[i], core[j], dist(i, j)});

  detail::RefHierarchy hier;
  hier.n = n;
  hier.nodes.resize(n);  // placeholder leaf slots so internal ids start at n
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  hier.root = detail::build_ref_hierarchy(reach, all, hier);

  detail::RefCondenser condenser(hier, params.min_cluster_size);
  RefResult out;
  out.tree = condenser.run();
  detail::ref_stability(out.tree, 0);
  out.selected = detail::ref_eom(out.tree, 0).second;
  std::sort(out.selected.begin(), out.selected.end());

  const auto groups =
      detail::ref_epsilon_groups(out.tree, out.selected, params.selection_epsilon);

  std::vector<int> group_of(out.tree.nodes.size(), -1);
  for (size_t g = 0; g < groups.size(); ++g)
    for (int node : groups[g]) group_of[node] = static_cast<int>(g);

  std::vector<int> raw(n, -1);
  for (int p = 0; p < n; ++p) {
    for (int node = condenser.fall_node[p]; node >= 0; node = out.tree.nodes[node].parent) {
      if (group_of[node] >= 0) {
        raw[p] = group_of[node];
        break;
      }
    }
  }

  std::vector<int> first_point(groups.size(), n);
  for (int p = n - 1; p >= 0; --p)
    if (raw[p] >= 0) first_point[raw[p]] = p;
  std::vector<int> order;
  for (size_t g = 0; g < groups.size(); ++g) order.push_back(static_cast<int>(g));
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return first_point[a] < first_point[b]; });
  std::vector<int> compact(groups.size(), -1);
  for (size_t i = 0; i < order.size(); ++i) compact[order[i]] = static_cast<int>(i);

  out.assignments.assign(n, kNoise);
  for (int p = 0; p < n; ++p)
    if (raw[p] >= 0) out.assignments[p] = compact[raw[p]];
  return out;
}

/// Empty string when the fitted model matches the oracle exactly; otherwise
/// a description of the first mismatch.
inline std::string ref_mismatch(const ClusterModel& model, const RefResult& ref) {
  std::ostringstream oss;
  if (model.condensed.nodes.size() != ref.tree.nodes.size()) {
    oss << "node count " << model.condensed.nodes.size() << " vs " << ref.tree.nodes.size();
    return oss.str();
  }
  for (size_t k = 0; k < ref.tree.nodes.size(); ++k) {
    const auto& a = model.condensed.nodes[k];
    const auto& b = ref.tree.nodes[k];
    if (a.parent != b.parent || a.lambda_birth != b.lambda_birth ||
        a.size_at_birth != b.size_at_birth || a.children != b.children ||
        a.fall_outs != b.fall_outs || a.stability != b.stability) {
      oss << "condensed node " << k << " differs";
      return oss.str();
    }
  }
  if (model.selected_nodes != ref.selected) {
    oss << "selected clusters differ";
    return oss.str();
  }
  if (model.assignments != ref.assignments) {
    oss << "assignments differ";
    return oss.str();
  }
  return "";
}

}  // namespace pnr::test

#endif
