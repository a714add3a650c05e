#include "pnr/hdbscan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "pnr/errors.hpp"

namespace pnr {

using nlohmann::json;

void HdbscanParams::validate() const {
  require(min_cluster_size >= 2, ErrorCode::InvalidArgument, "min_cluster_size must be >= 2");
  require(min_samples >= 1, ErrorCode::InvalidArgument, "min_samples must be >= 1");
  require(min_samples <= min_cluster_size, ErrorCode::InvalidArgument,
          "min_samples must not exceed min_cluster_size");
  require(selection_epsilon >= 0.0, ErrorCode::InvalidArgument,
          "selection_epsilon must be >= 0");
}

double pair_distance(const Eigen::MatrixXd& points, Eigen::Index a, Eigen::Index b) {
  return (points.row(a) - points.row(b)).norm();
}

namespace {

Eigen::VectorXd core_impl(const Eigen::MatrixXd& points, int min_samples, bool parallel) {
  const Eigen::Index n = points.rows();
  require(n >= 2, ErrorCode::TooFewPoints, "need at least 2 points");
  require(min_samples >= 1, ErrorCode::InvalidArgument, "min_samples must be >= 1");
  const auto k = std::min<Eigen::Index>(min_samples, n - 1);
  Eigen::VectorXd core(n);

  auto kth_distance = [&](Eigen::Index i, std::vector<double>& scratch) {
    scratch.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) scratch.push_back(pair_distance(points, i, j));
    std::nth_element(scratch.begin(), scratch.begin() + (k - 1), scratch.end());
    return scratch[k - 1];
  };

  if (parallel) {
#pragma omp parallel
    {
      std::vector<double> scratch;
      scratch.reserve(n);
#pragma omp for schedule(static)
      for (Eigen::Index i = 0; i < n; ++i) core[i] = kth_distance(i, scratch);
    }
  } else {
    std::vector<double> scratch;
    scratch.reserve(n);
    for (Eigen::Index i = 0; i < n; ++i) core[i] = kth_distance(i, scratch);
  }
  return core;
}

}  // namespace

Eigen::VectorXd core_distances(const Eigen::MatrixXd& points, int min_samples) {
  return core_impl(points, min_samples, true);
}

Eigen::VectorXd core_distances_serial(const Eigen::MatrixXd& points, int min_samples) {
  return core_impl(points, min_samples, false);
}

namespace {

struct MstEdge {
  int a = 0, b = 0;
  double w = 0.0;
};

// Prim over the complete mutual-reachability graph; ties keep the smaller
// point index so the edge list is reproducible.
std::vector<MstEdge> prim_mst(const Eigen::MatrixXd& pts, const Eigen::VectorXd& core) {
  const int n = static_cast<int>(pts.rows());
  std::vector<double> key(n, std::numeric_limits<double>::infinity());
  std::vector<int> parent(n, -1);
  std::vector<char> done(n, 0);
  key[0] = 0.0;
  std::vector<MstEdge> edges;
  edges.reserve(n - 1);
  for (int it = 0; it < n; ++it) {
    int u = -1;
    for (int v = 0; v < n; ++v)
      if (!done[v] && (u < 0 || key[v] < key[u])) u = v;
    done[u] = 1;
    if (parent[u] >= 0) edges.push_back({parent[u], u, key[u]});
    for (int v = 0; v < n; ++v) {
      if (done[v]) continue;
      const double w = std::max({core[u], core[v], pair_distance(pts, u, v)});
      if (w < key[v]) {
        key[v] = w;
        parent[v] = u;
      }
    }
  }
  return edges;
}

// Single-linkage tree with every merge happening at one distinct weight
// collapsed into a single multiway node: the children are exactly the
// connected components present just below that weight, which is a property
// of the weight set alone, not of the particular MST.
struct HierNode {
  double weight = 0.0;
  std::vector<int> children;  // ids < n are single points
  int size = 1;
  int min_point = 0;
};

struct Hierarchy {
  std::vector<HierNode> nodes;
  int root = -1;
  int n = 0;

  int size_of(int id) const { return id < n ? 1 : nodes[id].size; }
  int min_point_of(int id) const { return id < n ? id : nodes[id].min_point; }
};

struct Dsu {
  std::vector<int> parent;
  explicit Dsu(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  int unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    parent[b] = a;
    return a;
  }
};

Hierarchy build_hierarchy(int n, std::vector<MstEdge> edges) {
  std::sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) {
    return x.w != y.w ? x.w < y.w : std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });

  Hierarchy h;
  h.n = n;
  h.nodes.resize(n);  // leaves; ids 0..n-1 queried via size_of/min_point_of only
  Dsu dsu(n);
  std::vector<int> cur_node(n);
  std::iota(cur_node.begin(), cur_node.end(), 0);

  for (size_t i = 0; i < edges.size();) {
    size_t j = i;
    while (j < edges.size() && edges[j].w == edges[i].w) ++j;

    std::map<int, std::vector<int>> acc;  // dsu root -> pre-group node ids
    auto take = [&](int root) {
      auto it = acc.find(root);
      if (it == acc.end()) return std::vector<int>{cur_node[root]};
      std::vector<int> v = std::move(it->second);
      acc.erase(it);
      return v;
    };
    for (size_t e = i; e < j; ++e) {
      const int ra = dsu.find(edges[e].a);
      const int rb = dsu.find(edges[e].b);
      if (ra == rb) continue;  // impossible for tree edges, kept as a guard
      std::vector<int> va = take(ra);
      std::vector<int> vb = take(rb);
      va.insert(va.end(), vb.begin(), vb.end());
      acc[dsu.unite(ra, rb)] = std::move(va);
    }
    for (auto& [root, members] : acc) {
      std::sort(members.begin(), members.end(),
                [&](int a, int b) { return h.min_point_of(a) < h.min_point_of(b); });
      HierNode node;
      node.weight = edges[i].w;
      node.children = std::move(members);
      node.size = 0;
      node.min_point = n;
      for (int c : node.children) {
        node.size += h.size_of(c);
        node.min_point = std::min(node.min_point, h.min_point_of(c));
      }
      const int id = static_cast<int>(h.nodes.size());
      h.nodes.push_back(std::move(node));
      cur_node[root] = id;
    }
    i = j;
  }
  h.root = cur_node[dsu.find(0)];
  return h;
}

struct Condenser {
  const Hierarchy& hier;
  int mcs;
  CondensedTree tree;
  std::vector<int> fall_node;  // per point: condensed cluster it fell out of

  Condenser(const Hierarchy& h, int min_cluster_size)
      : hier(h), mcs(min_cluster_size), fall_node(h.n, 0) {}

  void collect_points(int id, std::vector<int>& out) const {
    std::vector<int> stack{id};
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      if (cur < hier.n) {
        out.push_back(cur);
      } else {
        for (int c : hier.nodes[cur].children) stack.push_back(c);
      }
    }
  }

  void fall(int id, int k, double lam) {
    std::vector<int> pts;
    collect_points(id, pts);
    for (int p : pts) {
      tree.nodes[k].fall_outs.emplace_back(p, lam);
      fall_node[p] = k;
    }
  }

  // Walks the component rooted at hierarchy node h as condensed cluster k.
  // A split with >= 2 surviving children creates new clusters (preorder,
  // children by smallest point index); exactly one survivor continues k;
  // none ends k.
  void run(int h, int k) {
    int cur = h;
    for (;;) {
      const HierNode& node = hier.nodes[cur];
      const double lam = lambda_of(node.weight);
      std::vector<int> big;
      std::vector<int> small;
      for (int c : node.children)
        (hier.size_of(c) >= mcs ? big : small).push_back(c);
      std::sort(big.begin(), big.end(),
                [&](int a, int b) { return hier.min_point_of(a) < hier.min_point_of(b); });

      if (big.size() >= 2) {
        for (int c : small) fall(c, k, lam);
        for (int c : big) {
          const int child_id = static_cast<int>(tree.nodes.size());
          CondensedNode child;
          child.parent = k;
          child.lambda_birth = lam;
          child.size_at_birth = hier.size_of(c);
          tree.nodes.push_back(std::move(child));
          tree.nodes[k].children.push_back(child_id);
          run(c, child_id);
        }
        return;
      }
      if (big.size() == 1) {
        for (int c : small) fall(c, k, lam);
        cur = big[0];
        continue;
      }
      for (int c : node.children) fall(c, k, lam);
      return;
    }
  }

  CondensedTree condense() {
    CondensedNode root;
    root.parent = -1;
    root.lambda_birth = 0.0;
    root.size_at_birth = hier.size_of(hier.root);
    tree.nodes.push_back(std::move(root));
    run(hier.root, 0);
    for (auto& node : tree.nodes)
      std::sort(node.fall_outs.begin(), node.fall_outs.end());
    return std::move(tree);
  }
};

// S(C) = sum over birth members of (lambda at which the point left C, either
// by falling out or by passing into a child cluster, minus lambda_birth).
// Contributions are added in ascending point order so independent
// implementations agree bit for bit.
void compute_stabilities(CondensedTree& tree) {
  const int n_nodes = static_cast<int>(tree.nodes.size());
  std::vector<std::vector<int>> members(n_nodes);  // birth members, ascending
  for (int k = n_nodes - 1; k >= 0; --k) {
    auto& node = tree.nodes[k];
    std::vector<std::pair<int, double>> leaves;  // (point, lambda_leave)
    leaves.reserve(node.size_at_birth);
    for (const auto& fo : node.fall_outs) leaves.push_back(fo);
    for (int c : node.children) {
      for (int p : members[c]) leaves.emplace_back(p, tree.nodes[c].lambda_birth);
      members[c].clear();
      members[c].shrink_to_fit();
    }
    std::sort(leaves.begin(), leaves.end());
    double s = 0.0;
    for (const auto& [p, lam] : leaves) s += lam - node.lambda_birth;
    node.stability = s;
    members[k].reserve(leaves.size());
    for (const auto& [p, lam] : leaves) members[k].push_back(p);
  }
}

// Excess of mass with a strict inequality; ties keep the children. The root
// is never selected, so a data set that never truly splits is all noise.
std::vector<int> select_eom(const CondensedTree& tree) {
  const int n_nodes = static_cast<int>(tree.nodes.size());
  std::vector<double> value(n_nodes, 0.0);
  std::vector<char> selected(n_nodes, 0);
  for (int k = n_nodes - 1; k >= 0; --k) {
    const auto& node = tree.nodes[k];
    if (node.children.empty()) {
      value[k] = node.stability;
      selected[k] = (k != 0);
      continue;
    }
    double sum = 0.0;
    for (int c : node.children) sum += value[c];
    if (k != 0 && node.stability > sum) {
      value[k] = node.stability;
      selected[k] = 1;
    } else {
      value[k] = sum;
      selected[k] = 0;
    }
  }
  std::vector<char> shadowed(n_nodes, 0);
  std::vector<int> picked;
  for (int k = 0; k < n_nodes; ++k) {  // preorder: parents first
    const auto& node = tree.nodes[k];
    const bool under = node.parent >= 0 && (shadowed[node.parent] || selected[node.parent]);
    shadowed[k] = under ? 1 : 0;
    if (under) selected[k] = 0;
  }
  for (int k = 1; k < n_nodes; ++k)
    if (selected[k]) picked.push_back(k);
  return picked;
}

double birth_distance(const CondensedTree& tree, int k) {
  if (k == 0) return std::numeric_limits<double>::infinity();
  return 1.0 / tree.nodes[k].lambda_birth;
}

// Clusters born closer than epsilon climb to their first ancestor born at
// >= epsilon; clusters sharing that ancestor merge. If one group's anchor
// sits under another group's anchor, the lower group joins the upper one.
// Merging unions the selected clusters' members only.
std::vector<std::vector<int>> epsilon_groups(const CondensedTree& tree,
                                             const std::vector<int>& selected, double epsilon) {
  std::map<int, std::vector<int>> by_rep;
  for (int k : selected) {
    int rep = k;
    while (birth_distance(tree, rep) < epsilon) rep = tree.nodes[rep].parent;
    by_rep[rep].push_back(k);
  }
  // Resolve nesting: attach each rep to its topmost ancestor that is a rep.
  std::map<int, int> final_rep;
  for (const auto& [rep, group] : by_rep) {
    int top = rep;
    for (int a = tree.nodes[rep].parent; a >= 0; a = tree.nodes[a].parent)
      if (by_rep.count(a)) top = a;
    final_rep[rep] = top;
  }
  std::map<int, std::vector<int>> merged;
  for (const auto& [rep, group] : by_rep) {
    auto& dst = merged[final_rep.at(rep)];
    dst.insert(dst.end(), group.begin(), group.end());
  }
  std::vector<std::vector<int>> out;
  for (auto& [rep, group] : merged) {
    std::sort(group.begin(), group.end());
    out.push_back(std::move(group));
  }
  return out;
}

}  // namespace

ClusterModel hdbscan_fit(const Eigen::MatrixXd& points, const HdbscanParams& params) {
  params.validate();
  require(points.rows() >= params.min_cluster_size, ErrorCode::TooFewPoints,
          "fewer points than min_cluster_size");
  require(points.allFinite(), ErrorCode::InvalidArgument, "points must be finite");
  const int n = static_cast<int>(points.rows());

  ClusterModel model;
  model.points = points;
  model.params = params;
  model.core_distances = core_distances(points, params.min_samples);

  const auto mst = prim_mst(points, model.core_distances);
  const Hierarchy hier = build_hierarchy(n, mst);
  Condenser condenser(hier, params.min_cluster_size);
  model.condensed = condenser.condense();
  compute_stabilities(model.condensed);
  model.selected_nodes = select_eom(model.condensed);
  const auto groups =
      epsilon_groups(model.condensed, model.selected_nodes, params.selection_epsilon);

  // A point belongs to the selected cluster whose subtree it fell out of.
  const int n_nodes = static_cast<int>(model.condensed.nodes.size());
  std::vector<int> owner(n_nodes, -1);  // group index per condensed node
  for (size_t g = 0; g < groups.size(); ++g)
    for (int k : groups[g]) owner[k] = static_cast<int>(g);
  for (int k = 1; k < n_nodes; ++k)
    if (owner[k] < 0) owner[k] = owner[model.condensed.nodes[k].parent];

  std::vector<int> raw(n, -1);
  for (int p = 0; p < n; ++p) raw[p] = owner[condenser.fall_node[p]];

  // Compact ids ordered by each group's smallest member point.
  std::vector<int> first_point(groups.size(), n);
  for (int p = n - 1; p >= 0; --p)
    if (raw[p] >= 0) first_point[raw[p]] = p;
  std::vector<int> order;
  for (size_t g = 0; g < groups.size(); ++g)
    if (first_point[g] < n) order.push_back(static_cast<int>(g));
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return first_point[a] < first_point[b]; });
  std::vector<int> compact(groups.size(), -1);
  for (size_t i = 0; i < order.size(); ++i) compact[order[i]] = static_cast<int>(i);

  model.assignments.assign(n, kNoise);
  const auto m = static_cast<Eigen::Index>(order.size());
  model.centroids = Eigen::MatrixXd::Zero(m, points.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(m);
  for (int p = 0; p < n; ++p) {
    if (raw[p] < 0) continue;
    const int id = compact[raw[p]];
    model.assignments[p] = id;
    model.centroids.row(id) += points.row(p);
    counts[id] += 1.0;
  }
  for (Eigen::Index c = 0; c < m; ++c) model.centroids.row(c) /= counts[c];

  if (m > 0) model.photon_map = map_clusters_to_photon_numbers(model, 0.35);
  return model;
}

namespace {

std::vector<int32_t> predict_impl(const ClusterModel& model, const Eigen::MatrixXd& queries,
                                  bool parallel) {
  require(model.points.rows() >= 1, ErrorCode::InvalidArgument, "model has no fitted points");
  require(queries.cols() == model.points.cols(), ErrorCode::LengthMismatch,
          "query dimension differs from fitted points");
  const Eigen::Index n_q = queries.rows();
  std::vector<int32_t> out(n_q, kUnclassified);

  auto one = [&](Eigen::Index q) {
    Eigen::Index best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < model.points.rows(); ++i) {
      const double d2 = (model.points.row(i) - queries.row(q)).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    const int32_t cluster = model.assignments[best];
    if (cluster == kNoise) return kUnclassified;
    const double radius =
        std::max(model.core_distances[best], model.params.selection_epsilon);
    if (std::sqrt(best_d2) > radius) return kUnclassified;
    const auto it = model.photon_map.find(cluster);
    return it == model.photon_map.end() ? kUnclassified : it->second;
  };

  if (parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index q = 0; q < n_q; ++q) out[q] = one(q);
  } else {
    for (Eigen::Index q = 0; q < n_q; ++q) out[q] = one(q);
  }
  return out;
}

}  // namespace

std::vector<int32_t> hdbscan_predict(const ClusterModel& model, const Eigen::MatrixXd& queries) {
  return predict_impl(model, queries, true);
}

std::vector<int32_t> hdbscan_predict_serial(const ClusterModel& model,
                                            const Eigen::MatrixXd& queries) {
  return predict_impl(model, queries, false);
}

std::map<int32_t, int32_t> map_clusters_to_photon_numbers(
    const ClusterModel& model, double merge_gap_fraction,
    const std::optional<std::map<int32_t, int32_t>>& manual_override) {
  if (manual_override.has_value()) return *manual_override;
  const int32_t m = model.n_clusters();
  require(m >= 1, ErrorCode::InvalidArgument, "no clusters to map");
  require(merge_gap_fraction >= 0.0, ErrorCode::InvalidArgument,
          "merge_gap_fraction must be >= 0");

  std::vector<int32_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
    const double ca = model.centroids(a, 0), cb = model.centroids(b, 0);
    return ca != cb ? ca < cb : a < b;
  });

  std::map<int32_t, int32_t> map;
  map[order[0]] = 0;
  if (m == 1) return map;

  std::vector<double> gaps(m - 1);
  for (int32_t i = 0; i + 1 < m; ++i)
    gaps[i] = model.centroids(order[i + 1], 0) - model.centroids(order[i], 0);
  std::vector<double> sorted_gaps = gaps;
  std::sort(sorted_gaps.begin(), sorted_gaps.end());
  const double median = (m - 1) % 2 == 1
                            ? sorted_gaps[(m - 2) / 2]
                            : 0.5 * (sorted_gaps[(m - 1) / 2 - 1] + sorted_gaps[(m - 1) / 2]);

  int32_t photon = 0;
  for (int32_t i = 1; i < m; ++i) {
    if (gaps[i - 1] >= merge_gap_fraction * median) ++photon;
    map[order[i]] = photon;
  }
  return map;
}

void save_cluster_model_json(const ClusterModel& model, const std::string& path) {
  json j;
  j["version"] = 1;
  j["params"] = {{"min_cluster_size", model.params.min_cluster_size},
                 {"min_samples", model.params.min_samples},
                 {"selection_epsilon", model.params.selection_epsilon}};
  auto matrix_to_json = [](const Eigen::MatrixXd& mat) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < mat.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < mat.cols(); ++c) row.push_back(mat(r, c));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  j["points"] = matrix_to_json(model.points);
  j["centroids"] = matrix_to_json(model.centroids);
  j["assignments"] = model.assignments;
  j["core_distances"] = std::vector<double>(
      model.core_distances.data(), model.core_distances.data() + model.core_distances.size());
  json pm = json::array();
  for (const auto& [cluster, photon] : model.photon_map)
    pm.push_back(json::array({cluster, photon}));
  j["photon_map"] = std::move(pm);

  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot open " + path + " for writing");
  out << j.dump() << "\n";
  out.flush();
  require(out.good(), ErrorCode::IoError, "short write to " + path);
}

ClusterModel load_cluster_model_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::FormatError, path + ": " + e.what());
  }
  try {
    require(j.at("version").get<int>() == 1, ErrorCode::FormatError,
            path + ": unsupported version");
    ClusterModel model;
    const auto& p = j.at("params");
    model.params.min_cluster_size = p.at("min_cluster_size").get<int>();
    model.params.min_samples = p.at("min_samples").get<int>();
    model.params.selection_epsilon = p.at("selection_epsilon").get<double>();
    auto matrix_from_json = [&](const json& rows) {
      require(rows.is_array(), ErrorCode::FormatError, path + ": expected an array of rows");
      const size_t nr = rows.size();
      size_t nc = nr == 0 ? 0 : rows.at(0).size();
      Eigen::MatrixXd mat(nr, nc);
      for (size_t r = 0; r < nr; ++r) {
        const auto row = rows.at(r).get<std::vector<double>>();
        require(row.size() == nc, ErrorCode::FormatError, path + ": ragged matrix");
        for (size_t c = 0; c < nc; ++c) mat(r, c) = row[c];
      }
      return mat;
    };
    model.points = matrix_from_json(j.at("points"));
    model.centroids = matrix_from_json(j.at("centroids"));
    model.assignments = j.at("assignments").get<std::vector<int32_t>>();
    const auto core = j.at("core_distances").get<std::vector<double>>();
    model.core_distances = Eigen::Map<const Eigen::VectorXd>(core.data(), core.size());
    for (const auto& entry : j.at("photon_map")) {
      require(entry.is_array() && entry.size() == 2, ErrorCode::FormatError,
              path + ": photon_map entries must be [cluster, photon]");
      model.photon_map[entry.at(0).get<int32_t>()] = entry.at(1).get<int32_t>();
    }
    require(model.assignments.size() == static_cast<size_t>(model.points.rows()) &&
                core.size() == static_cast<size_t>(model.points.rows()),
            ErrorCode::FormatError, path + ": inconsistent model sizes");
    return model;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, path + ": " + e.what());
  }
}

}  // namespace pnr
