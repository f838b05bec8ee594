#include "geodrift/ot.hpp"

#include <cmath>

namespace geodrift {

namespace {

// Spanning-tree basis for the transportation problem on rows 0..m-1 and
// columns m..m+n-1. Arcs are stored flat; adjacency is rebuilt per pivot into
// caller-owned scratch (counting sort, no per-node allocations).
struct Basis {
  long m, n;
  std::vector<long> arc_row, arc_col;  // arc i joins row arc_row[i], col arc_col[i]
  std::vector<double> flow;

  long nodes() const { return m + n; }
  long arcs() const { return static_cast<long>(arc_row.size()); }
};

// CSR adjacency: arcs incident to node v are adj_flat[adj_start[v] ..
// adj_start[v+1]).
void build_adjacency(const Basis& basis, std::vector<long>& adj_start,
                     std::vector<long>& adj_flat, std::vector<long>& cursor) {
  const long V = basis.nodes(), E = basis.arcs();
  adj_start.assign(V + 1, 0);
  for (long e = 0; e < E; ++e) {
    ++adj_start[basis.arc_row[e] + 1];
    ++adj_start[basis.m + basis.arc_col[e] + 1];
  }
  for (long v = 0; v < V; ++v) adj_start[v + 1] += adj_start[v];
  adj_flat.resize(2 * E);
  cursor.assign(adj_start.begin(), adj_start.end() - 1);
  for (long e = 0; e < E; ++e) {
    adj_flat[cursor[basis.arc_row[e]]++] = e;
    adj_flat[cursor[basis.m + basis.arc_col[e]]++] = e;
  }
}

// Northwest-corner initial basic feasible solution. Supplies/demands must be
// strictly positive (the caller perturbs); simultaneous exhaustion adds a
// zero arc so the basis keeps exactly m + n - 1 arcs.
Basis northwest_corner(Vec a, Vec b) {
  Basis basis;
  basis.m = a.size();
  basis.n = b.size();
  long i = 0, j = 0;
  while (i < basis.m && j < basis.n) {
    const double q = std::min(a(i), b(j));
    basis.arc_row.push_back(i);
    basis.arc_col.push_back(j);
    basis.flow.push_back(q);
    a(i) -= q;
    b(j) -= q;
    const bool row_done = a(i) <= b(j);
    if (row_done)
      ++i;
    else
      ++j;
    // On ties only the row advances, leaving a degenerate arc for column j.
  }
  // If the walk exits early (numerical leftovers), pad degenerate arcs along
  // the last row/column so the arc count is exactly m + n - 1.
  while (basis.arcs() < basis.m + basis.n - 1) {
    if (basis.arc_col.back() < basis.n - 1) {
      basis.arc_row.push_back(basis.m - 1);
      basis.arc_col.push_back(basis.arc_col.back() + 1);
    } else {
      basis.arc_row.push_back(basis.arc_row.back() + 1);
      basis.arc_col.push_back(basis.n - 1);
    }
    basis.flow.push_back(0.0);
  }
  return basis;
}

// Square problems start from the diagonal: ship min(a_i, b_i) in place, then
// route the residual surplus/deficit with a northwest walk. For ensemble
// transforms (identical source and target support, zero diagonal cost) this
// starts within a handful of pivots of the optimum instead of hundreds.
Basis diagonal_start(const Vec& a, const Vec& b) {
  const long N = a.size();
  Basis basis;
  basis.m = N;
  basis.n = N;
  std::vector<long> srow, dcol;
  std::vector<double> sres, dres;
  for (long i = 0; i < N; ++i) {
    const double q = std::min(a(i), b(i));
    basis.arc_row.push_back(i);
    basis.arc_col.push_back(i);
    basis.flow.push_back(q);
    // Every index joins the residual walk on exactly one side; exact ties
    // count as (zero-)surplus rows so the walk still spans all of them.
    if (a(i) - q > 0.0 || b(i) - q <= 0.0) {
      srow.push_back(i);
      sres.push_back(a(i) - q);
    } else {
      dcol.push_back(i);
      dres.push_back(b(i) - q);
    }
  }
  if (srow.empty() || dcol.empty()) {
    // a == b elementwise: the diagonal carries everything; chain zero arcs
    // keep the basis a spanning tree.
    for (long i = 0; i + 1 < N; ++i) {
      basis.arc_row.push_back(i + 1);
      basis.arc_col.push_back(i);
      basis.flow.push_back(0.0);
    }
    return basis;
  }
  const Basis res = northwest_corner(
      Eigen::Map<const Vec>(sres.data(), static_cast<long>(sres.size())),
      Eigen::Map<const Vec>(dres.data(), static_cast<long>(dres.size())));
  for (long e = 0; e < res.arcs(); ++e) {
    basis.arc_row.push_back(srow[res.arc_row[e]]);
    basis.arc_col.push_back(dcol[res.arc_col[e]]);
    basis.flow.push_back(res.flow[e]);
  }
  return basis;
}

// Duals from the tree: u_row + v_col = C(row, col) on every basic arc.
// Also records the BFS tree (parents) used to trace pivot cycles.
struct SimplexScratch {
  std::vector<long> adj_start, adj_flat, cursor, queue;
  std::vector<char> seen;
  std::vector<long> parent_node, parent_arc, path_arcs, from_row, from_col;
  Vec u, v;
};

void compute_duals(const Basis& basis, const Mat& C, SimplexScratch& s) {
  const long m = basis.m;
  build_adjacency(basis, s.adj_start, s.adj_flat, s.cursor);
  s.parent_node.assign(basis.nodes(), -1);
  s.parent_arc.assign(basis.nodes(), -1);
  s.seen.assign(basis.nodes(), 0);
  s.u.resize(m);
  s.v.resize(basis.n);
  s.queue.clear();
  s.queue.push_back(0);
  s.seen[0] = 1;
  s.u(0) = 0.0;
  for (std::size_t qi = 0; qi < s.queue.size(); ++qi) {
    const long node = s.queue[qi];
    for (long k = s.adj_start[node]; k < s.adj_start[node + 1]; ++k) {
      const long e = s.adj_flat[k];
      const long other = (node < m) ? m + basis.arc_col[e] : basis.arc_row[e];
      if (s.seen[other]) continue;
      s.seen[other] = 1;
      s.parent_node[other] = node;
      s.parent_arc[other] = e;
      if (other < m)
        s.u(other) = C(basis.arc_row[e], basis.arc_col[e]) - s.v(basis.arc_col[e]);
      else
        s.v(other - m) = C(basis.arc_row[e], basis.arc_col[e]) - s.u(basis.arc_row[e]);
      s.queue.push_back(other);
    }
  }
  if (static_cast<long>(s.queue.size()) != basis.nodes())
    throw std::runtime_error("solve_transport: basis lost connectivity");
}

// Dantzig pivots until optimal (true) or the pivot budget runs out (false).
bool run_simplex(Basis& basis, const Mat& C, double tol, long max_pivots,
                 SimplexScratch& s) {
  const long m = basis.m, n = basis.n;
  for (long pivot = 0;; ++pivot) {
    if (pivot >= max_pivots) return false;
    compute_duals(basis, C, s);

    // Entering arc: most negative reduced cost, first in column-major order
    // on ties. Column minima vectorize; the row index is recovered after.
    long bj = -1;
    double best = -tol;
    for (long j = 0; j < n; ++j) {
      const double mn = (C.col(j) - s.u).minCoeff() - s.v(j);
      if (mn < best) {
        best = mn;
        bj = j;
      }
    }
    if (bj < 0) return true;
    long bi = 0;
    {
      double bv = C(0, bj) - s.u(0);
      for (long i = 1; i < m; ++i) {
        const double r = C(i, bj) - s.u(i);
        if (r < bv) {
          bv = r;
          bi = i;
        }
      }
    }

    // Cycle: entering arc (bi, bj) plus the tree path col bj -> row bi.
    // Walk both endpoints to the root, then trim to the splice point.
    s.from_row.clear();
    s.from_col.clear();
    for (long node = bi; node != 0 && node != -1; node = s.parent_node[node])
      s.from_row.push_back(node);
    s.from_row.push_back(0);
    for (long node = m + bj; node != 0 && node != -1; node = s.parent_node[node])
      s.from_col.push_back(node);
    s.from_col.push_back(0);
    // Remove the shared tail beyond the lowest common ancestor.
    while (s.from_row.size() >= 2 && s.from_col.size() >= 2 &&
           s.from_row[s.from_row.size() - 1] == s.from_col[s.from_col.size() - 1] &&
           s.from_row[s.from_row.size() - 2] == s.from_col[s.from_col.size() - 2]) {
      s.from_row.pop_back();
      s.from_col.pop_back();
    }
    s.path_arcs.clear();
    for (std::size_t k = 0; k + 1 < s.from_row.size(); ++k)
      s.path_arcs.push_back(s.parent_arc[s.from_row[k]]);
    for (std::size_t k = s.from_col.size() - 1; k >= 1; --k)
      s.path_arcs.push_back(s.parent_arc[s.from_col[k - 1]]);

    // Orientation: arcs alternate -theta, +theta starting from the row end
    // (the entering arc itself carries +theta at row bi).
    double theta = std::numeric_limits<double>::infinity();
    long leave_pos = -1;
    for (std::size_t k = 0; k < s.path_arcs.size(); k += 2) {
      const double f = basis.flow[s.path_arcs[k]];
      if (f < theta - 1e-18 ||
          (leave_pos >= 0 && std::abs(f - theta) <= 1e-18 &&
           s.path_arcs[k] < s.path_arcs[leave_pos])) {
        theta = f;
        leave_pos = static_cast<long>(k);
      }
    }
    if (leave_pos < 0)
      throw std::runtime_error("solve_transport: no leaving arc (broken basis)");
    for (std::size_t k = 0; k < s.path_arcs.size(); ++k)
      basis.flow[s.path_arcs[k]] += (k % 2 == 0) ? -theta : theta;
    const long leaving = s.path_arcs[leave_pos];
    basis.arc_row[leaving] = bi;
    basis.arc_col[leaving] = bj;
    basis.flow[leaving] = theta;
  }
}

// Recomputes flows on the final tree from exact (unperturbed) marginals by
// leaf elimination; returns false if any flow comes out negative.
bool exact_flows_on_tree(const Basis& basis, const Vec& a, const Vec& b,
                         std::vector<double>& flow) {
  const long m = basis.m;
  std::vector<long> adj_start, adj_flat, cursor;
  build_adjacency(basis, adj_start, adj_flat, cursor);
  std::vector<long> degree(basis.nodes());
  std::vector<double> balance(basis.nodes());
  for (long r = 0; r < m; ++r) balance[r] = a(r);
  for (long c = 0; c < basis.n; ++c) balance[m + c] = -b(c);
  for (long node = 0; node < basis.nodes(); ++node)
    degree[node] = adj_start[node + 1] - adj_start[node];

  flow.assign(basis.arcs(), 0.0);
  std::vector<char> arc_done(basis.arcs(), 0);
  std::vector<char> node_done(basis.nodes(), 0);
  std::vector<long> leaves;
  for (long node = 0; node < basis.nodes(); ++node)
    if (degree[node] == 1) leaves.push_back(node);

  bool ok = true;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const long node = leaves[li];
    if (node_done[node]) continue;
    node_done[node] = 1;
    for (long k = adj_start[node]; k < adj_start[node + 1]; ++k) {
      const long e = adj_flat[k];
      if (arc_done[e]) continue;
      arc_done[e] = 1;
      const long other = (node < m) ? m + basis.arc_col[e] : basis.arc_row[e];
      // Row -> col arcs carry positive mass from supply to demand. A leaf row
      // ships its whole remaining supply; a leaf column draws its whole
      // remaining demand from the row at the other end.
      const double f = (node < m) ? balance[node] : -balance[node];
      flow[e] = f;
      if (f < -1e-12) ok = false;
      balance[node] = 0.0;
      balance[other] += (node < m) ? f : -f;
      if (--degree[other] == 1) leaves.push_back(other);
      break;
    }
  }
  return ok;
}

}  // namespace

TransportPlan solve_transport(const Mat& C, const Vec& a, const Vec& b) {
  const long m = a.size(), n = b.size();
  if (C.rows() != m || C.cols() != n)
    throw std::invalid_argument("solve_transport: cost shape mismatch");
  if ((a.array() < 0).any() || (b.array() < 0).any())
    throw std::invalid_argument("solve_transport: negative mass");

  // Generic perturbation keeps the northwest walk and the pivots away from
  // degenerate ties; exact marginals are restored on the final tree.
  const double delta = 1e-13 / static_cast<double>(m);
  Vec ap = a, bp = b;
  double total = 0.0;
  for (long i = 0; i < m; ++i) {
    const double eps_i = delta * static_cast<double>(i + 1);
    ap(i) += eps_i;
    total += eps_i;
  }
  bp.array() += total / static_cast<double>(n);

  SimplexScratch scratch;
  const double scale = std::max(1.0, C.cwiseAbs().maxCoeff());
  const double tol = 1e-12 * scale;
  const long max_pivots = 400 * (m + n);

  Basis basis;
  bool solved = false;
  if (m == n) {
    basis = diagonal_start(ap, bp);
    solved = run_simplex(basis, C, tol, max_pivots, scratch);
  }
  if (!solved) {
    // Rectangular problems, and the (never yet observed) case of the
    // diagonal start cycling on its degenerate arcs: plain northwest corner.
    basis = northwest_corner(ap, bp);
    if (!run_simplex(basis, C, tol, max_pivots, scratch))
      throw std::runtime_error("solve_transport: pivot limit hit (degenerate LP)");
  }

  std::vector<double> exact;
  if (!exact_flows_on_tree(basis, a, b, exact)) exact = basis.flow;

  TransportPlan plan;
  for (long e = 0; e < basis.arcs(); ++e) {
    if (exact[e] <= 0.0) continue;
    plan.row.push_back(basis.arc_row[e]);
    plan.col.push_back(basis.arc_col[e]);
    plan.mass.push_back(exact[e]);
    plan.cost += exact[e] * C(basis.arc_row[e], basis.arc_col[e]);
  }
  return plan;
}

Mat etpf_transform(const Mat& X, const Vec& weights) {
  const long N = X.rows();
  if (weights.size() != N)
    throw std::invalid_argument("etpf_transform: weight length mismatch");
  if ((weights.array() < 0).any())
    throw std::invalid_argument("etpf_transform: negative weight");
  const double wsum = weights.sum();
  if (!(wsum > 0.0)) throw std::runtime_error("etpf_transform: all weights vanish");

  const Vec w = weights / wsum;
  if ((w.array() - w(0)).abs().maxCoeff() == 0.0) return X;  // identity coupling

  // Squared-Euclidean cost between all particle pairs.
  Mat C = -2.0 * X * X.transpose();
  const Vec sq = X.rowwise().squaredNorm();
  C.colwise() += sq;
  C.rowwise() += sq.transpose();
  C = C.cwiseMax(0.0);

  const Vec b = Vec::Constant(N, 1.0 / static_cast<double>(N));
  const TransportPlan plan = solve_transport(C, w, b);

  Mat out = Mat::Zero(N, X.cols());
  for (std::size_t e = 0; e < plan.mass.size(); ++e)
    out.row(plan.col[e]) += static_cast<double>(N) * plan.mass[e] * X.row(plan.row[e]);
  return out;
}

}  // namespace geodrift
