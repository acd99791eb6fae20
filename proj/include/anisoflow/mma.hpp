#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace anisoflow {

struct MmaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/**
 * Tuning constants for the method of moving asymptotes. The defaults are the
 * classic Svanberg settings with a 0.2-box move limit and the dual subproblem
 * polished to a 1e-9 KKT tolerance.
 */
struct MmaOptions {
  double asymptote_init = 0.5;    // initial asymptote offset, fraction of (ub - lb)
  double asymptote_shrink = 0.7;  // applied when a variable oscillates
  double asymptote_expand = 1.2;  // applied on monotone progress
  double asymptote_min = 1e-3;    // floor on the offset, fraction of (ub - lb)
  double asymptote_max = 10.0;    // cap on the offset, fraction of (ub - lb)
  double move_limit = 0.2;        // max |x_next - x|, fraction of (ub - lb)
  double bound_gap = 0.1;         // inner box keeps this fraction of the asymptote gap
  double raa0 = 1e-4;             // strict-convexity floor in the rational approximation
  double kkt_tol = 1e-9;          // dual interior-point target
  double constraint_penalty = 1000.0;  // linear weight on constraint slack
  double slack_curvature = 1.0;        // quadratic weight on constraint slack
};

/**
 * Method of moving asymptotes for box-bounded minimization with a small
 * number of inequality constraints g_i(x) <= 0.
 *
 * Each call to step() builds Svanberg's separable rational approximation of
 * the objective and constraints around the current iterate,
 *
 *   f(x) ~ sum_j [ p_j / (U_j - x_j) + q_j / (x_j - L_j) ],
 *
 * between per-variable moving asymptotes L < x < U, and minimizes it over the
 * inner box [alfa, beta] (asymptote gap, move limit, and the caller's bounds).
 * Constraint violations are absorbed by heavily penalized slack variables, so
 * the subproblem is always feasible. It is solved through its dual: for fixed
 * multipliers the minimizing x has the closed form
 *
 *   x_j(lambda) = (sqrt(p_j) L_j + sqrt(q_j) U_j) / (sqrt(p_j) + sqrt(q_j))
 *
 * clamped to [alfa_j, beta_j], and the remaining saddle system in the
 * multipliers lambda and slacks y is solved by a damped Newton interior-point
 * iteration with the usual epsi -> 0.1*epsi continuation until the relaxed
 * KKT residual is below kkt_tol.
 *
 * Asymptotes start at +-asymptote_init*(ub - lb) around the iterate, shrink
 * when a variable's successive updates change sign, and expand when they keep
 * direction. Variables with ub == lb are held fixed. A zero objective
 * gradient with no active constraint pressure returns x unchanged.
 *
 * For periodic variables (angles re-wrapped into a principal interval between
 * iterations) call shift_history() with the per-variable wrap offsets so the
 * stored iterate history and asymptotes move with the representative and the
 * oscillation test keeps its meaning.
 */
class Mma {
 public:
  Mma(int num_vars, int num_constraints, MmaOptions opts = {})
      : n_(num_vars), m_(num_constraints), opts_(opts) {
    if (n_ <= 0) throw MmaError("mma: need at least one variable");
    if (m_ < 0) throw MmaError("mma: negative constraint count");
    x_prev_ = Eigen::VectorXd::Zero(n_);
    x_prev2_ = Eigen::VectorXd::Zero(n_);
    low_ = Eigen::VectorXd::Zero(n_);
    upp_ = Eigen::VectorXd::Zero(n_);
  }

  int iteration() const { return iter_; }
  const Eigen::VectorXd& lower_asymptote() const { return low_; }
  const Eigen::VectorXd& upper_asymptote() const { return upp_; }
  const Eigen::VectorXd& previous_iterate() const { return x_prev_; }

  /// Translate the stored history (previous iterates and asymptotes) by
  /// `delta` per variable. Use when the caller re-parameterizes a variable by
  /// a constant shift, e.g. wrapping an angle by a multiple of 2*pi.
  void shift_history(const Eigen::VectorXd& delta) {
    if (delta.size() != n_) throw MmaError("mma: shift_history size mismatch");
    x_prev_ += delta;
    x_prev2_ += delta;
    low_ += delta;
    upp_ += delta;
  }

  /**
   * One design update from iterate x with objective gradient df, constraint
   * values g (g_i <= 0 feasible) and gradients dg (m x n), and box bounds
   * lb <= x <= ub. The objective value f is accepted for interface symmetry;
   * the subproblem only needs the gradients. Returns the subproblem minimizer,
   * which satisfies the bounds and the move limit exactly.
   */
  Eigen::VectorXd step(const Eigen::VectorXd& x_in, double f, const Eigen::VectorXd& df,
                       const Eigen::VectorXd& g, const Eigen::MatrixXd& dg,
                       const Eigen::VectorXd& lb, const Eigen::VectorXd& ub) {
    (void)f;
    if (x_in.size() != n_ || df.size() != n_ || lb.size() != n_ || ub.size() != n_)
      throw MmaError("mma: variable-sized argument has wrong length");
    if (g.size() != m_ || dg.rows() != m_ || (m_ > 0 && dg.cols() != n_))
      throw MmaError("mma: constraint-sized argument has wrong shape");

    const Eigen::ArrayXd xl = lb.array(), xu = ub.array();
    Eigen::ArrayXd range = xu - xl;
    if ((range < 0.0).any()) throw MmaError("mma: ub < lb for some variable");

    // Tolerate round-off dust outside the box, reject real violations.
    Eigen::ArrayXd x = x_in.array();
    const double slack = 1e-9;
    if ((x < xl - slack * range.max(1.0)).any() || (x > xu + slack * range.max(1.0)).any())
      throw MmaError("mma: iterate violates its bounds");
    x = x.max(xl).min(xu);

    ++iter_;

    // --- moving asymptotes -------------------------------------------------
    if (iter_ <= 2) {
      low_ = (x - opts_.asymptote_init * range).matrix();
      upp_ = (x + opts_.asymptote_init * range).matrix();
    } else {
      for (int j = 0; j < n_; ++j) {
        const double trend = (x[j] - x_prev_[j]) * (x_prev_[j] - x_prev2_[j]);
        double factor = 1.0;
        if (trend > 0.0) factor = opts_.asymptote_expand;
        if (trend < 0.0) factor = opts_.asymptote_shrink;
        low_[j] = x[j] - factor * (x_prev_[j] - low_[j]);
        upp_[j] = x[j] + factor * (upp_[j] - x_prev_[j]);
      }
    }
    low_ = low_.array().max(x - opts_.asymptote_max * range).min(x - opts_.asymptote_min * range).matrix();
    upp_ = upp_.array().min(x + opts_.asymptote_max * range).max(x + opts_.asymptote_min * range).matrix();

    // Inner box: keep a gap to the asymptotes, respect move limit and bounds.
    Eigen::ArrayXd alfa =
        xl.max(low_.array() + opts_.bound_gap * (x - low_.array())).max(x - opts_.move_limit * range);
    Eigen::ArrayXd beta =
        xu.min(upp_.array() - opts_.bound_gap * (upp_.array() - x)).min(x + opts_.move_limit * range);

    // Frozen variables (ub == lb): pin them and give the rational terms a
    // harmless finite width so no expression below divides by zero.
    for (int j = 0; j < n_; ++j) {
      if (range[j] == 0.0) {
        low_[j] = x[j] - 1.0;
        upp_[j] = x[j] + 1.0;
        alfa[j] = beta[j] = x[j];
      }
    }

    // --- separable rational approximation ----------------------------------
    const Eigen::ArrayXd ux1 = upp_.array() - x;
    const Eigen::ArrayXd xl1 = x - low_.array();
    const Eigen::ArrayXd ux2 = ux1 * ux1;
    const Eigen::ArrayXd xl2 = xl1 * xl1;
    const Eigen::ArrayXd xmami = range.max(1e-5);

    const Eigen::ArrayXd dfp = df.array().max(0.0);
    const Eigen::ArrayXd dfm = (-df.array()).max(0.0);
    const Eigen::ArrayXd pq0 = 0.001 * (dfp + dfm) + opts_.raa0 / xmami;
    const Eigen::ArrayXd p0 = (dfp + pq0) * ux2;
    const Eigen::ArrayXd q0 = (dfm + pq0) * xl2;

    Eigen::MatrixXd P(m_, n_), Q(m_, n_);
    Eigen::VectorXd b(m_);
    for (int i = 0; i < m_; ++i) {
      const Eigen::ArrayXd dgp = dg.row(i).transpose().array().max(0.0);
      const Eigen::ArrayXd dgm = (-dg.row(i).transpose().array()).max(0.0);
      const Eigen::ArrayXd pqi = 0.001 * (dgp + dgm) + opts_.raa0 / xmami;
      P.row(i) = ((dgp + pqi) * ux2).matrix().transpose();
      Q.row(i) = ((dgm + pqi) * xl2).matrix().transpose();
      b[i] = (P.row(i).transpose().array() / ux1 + Q.row(i).transpose().array() / xl1).sum() - g[i];
    }

    // Stationary point with no constraint pressure: the approximation is
    // symmetric around x, so the minimizer is x itself. Return it exactly.
    if (df.isZero(0.0) && (m_ == 0 || (g.array() <= 0.0).all())) {
      x_prev2_ = x_prev_;
      x_prev_ = x.matrix();
      return x.matrix();
    }

    // Minimizing x for given multipliers, clamped to the inner box.
    auto primal_of = [&](const Eigen::VectorXd& lam) -> Eigen::ArrayXd {
      Eigen::ArrayXd p = p0, q = q0;
      if (m_ > 0) {
        p += (P.transpose() * lam).array();
        q += (Q.transpose() * lam).array();
      }
      const Eigen::ArrayXd sp = p.sqrt(), sq = q.sqrt();
      Eigen::ArrayXd xs = (sp * low_.array() + sq * upp_.array()) / (sp + sq);
      return xs.max(alfa).min(beta);
    };

    Eigen::ArrayXd xopt;
    if (m_ == 0) {
      xopt = primal_of(Eigen::VectorXd());
    } else {
      xopt = solve_dual(p0, q0, P, Q, b, g, alfa, beta);
    }

    for (int j = 0; j < n_; ++j)
      if (range[j] == 0.0) xopt[j] = x[j];

    x_prev2_ = x_prev_;
    x_prev_ = x.matrix();
    return xopt.matrix();
  }

 private:
  /// Everything the dual Newton iteration needs at one (lambda, y, s, mu).
  struct DualPoint {
    Eigen::VectorXd r1, r2, r3, r4;  // residual blocks
    double rmax = 0.0;               // max-norm, drives the epsi continuation
    double rnorm = 0.0;              // 2-norm, drives the line search
    Eigen::ArrayXd xs, p, q;         // eliminated primal at this lambda
  };

  /**
   * Solve the subproblem through its dual. The box-bounded x is eliminated in
   * closed form, and the remaining KKT system in the constraint multipliers
   * lambda, slack variables y >= 0 (with multipliers mu), and constraint
   * slacks s >= 0,
   *
   *   g~(x(lambda)) - b - y + s = 0        (approximated constraints)
   *   c + d*y - lambda - mu     = 0        (slack stationarity)
   *   lambda_i s_i = epsi,  y_i mu_i = epsi  (relaxed complementarity)
   *
   * is driven by damped Newton steps with fraction-to-boundary damping and a
   * 2-norm line search, tightening epsi by factors of 10 down to kkt_tol.
   * Keeping y explicit (instead of the kinked recovery max(0,(lambda-c)/d))
   * keeps the system smooth, so Newton converges even when a constraint
   * cannot be met inside the move limits and its slack must activate.
   */
  Eigen::ArrayXd solve_dual(const Eigen::ArrayXd& p0, const Eigen::ArrayXd& q0,
                            const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q,
                            const Eigen::VectorXd& b, const Eigen::VectorXd& g,
                            const Eigen::ArrayXd& alfa, const Eigen::ArrayXd& beta) {
    (void)g;
    const double c = opts_.constraint_penalty;
    const double d = opts_.slack_curvature;

    auto primal_at = [&](const Eigen::VectorXd& lam, Eigen::ArrayXd& xs, Eigen::ArrayXd& p,
                         Eigen::ArrayXd& q) {
      p = p0 + (P.transpose() * lam).array();
      q = q0 + (Q.transpose() * lam).array();
      const Eigen::ArrayXd sp = p.sqrt(), sq = q.sqrt();
      xs = ((sp * low_.array() + sq * upp_.array()) / (sp + sq)).max(alfa).min(beta);
    };

    auto eval = [&](const Eigen::VectorXd& lam, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& s, const Eigen::VectorXd& mu,
                    double epsi) -> DualPoint {
      DualPoint pt;
      primal_at(lam, pt.xs, pt.p, pt.q);
      const Eigen::ArrayXd inv_u = 1.0 / (upp_.array() - pt.xs);
      const Eigen::ArrayXd inv_l = 1.0 / (pt.xs - low_.array());
      pt.r1 = P * inv_u.matrix() + Q * inv_l.matrix() - b - y + s;
      pt.r2 = lam.cwiseProduct(s) - Eigen::VectorXd::Constant(m_, epsi);
      pt.r3 = Eigen::VectorXd::Constant(m_, c) + d * y - lam - mu;
      pt.r4 = y.cwiseProduct(mu) - Eigen::VectorXd::Constant(m_, epsi);
      pt.rmax = std::max(std::max(pt.r1.lpNorm<Eigen::Infinity>(), pt.r2.lpNorm<Eigen::Infinity>()),
                         std::max(pt.r3.lpNorm<Eigen::Infinity>(), pt.r4.lpNorm<Eigen::Infinity>()));
      pt.rnorm = std::sqrt(pt.r1.squaredNorm() + pt.r2.squaredNorm() + pt.r3.squaredNorm() +
                           pt.r4.squaredNorm());
      return pt;
    };

    Eigen::VectorXd lam = Eigen::VectorXd::Ones(m_);
    Eigen::VectorXd y = Eigen::VectorXd::Ones(m_);
    Eigen::VectorXd s = Eigen::VectorXd::Ones(m_);
    Eigen::VectorXd mu = Eigen::VectorXd::Constant(m_, std::max(1.0, 0.5 * c));

    double epsi = 1.0;
    constexpr int kMaxInner = 200;
    DualPoint pt = eval(lam, y, s, mu, epsi);
    while (true) {
      int inner = 0;
      while (pt.rmax >= 0.9 * epsi && inner++ < kMaxInner) {
        // Gauss-Newton curvature of the eliminated x: clamped variables do
        // not move with lambda and drop out.
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m_, m_);
        for (int j = 0; j < n_; ++j) {
          if (!(pt.xs[j] > alfa[j] && pt.xs[j] < beta[j])) continue;
          const double ux = upp_[j] - pt.xs[j];
          const double lx = pt.xs[j] - low_[j];
          const double curv =
              2.0 * pt.p[j] / (ux * ux * ux) + 2.0 * pt.q[j] / (lx * lx * lx);
          const Eigen::VectorXd dgt = P.col(j) / (ux * ux) - Q.col(j) / (lx * lx);
          G.noalias() += dgt * dgt.transpose() / curv;
        }

        // Condense ds, dy, dmu out of the Newton system; the remaining m x m
        // block is SPD.
        const Eigen::ArrayXd dy_den = d + mu.array() / y.array();
        Eigen::MatrixXd A = G;
        A.diagonal() += (s.array() / lam.array() + 1.0 / dy_den).matrix();
        const Eigen::VectorXd rhs =
            pt.r1 - pt.r2.cwiseQuotient(lam) +
            ((pt.r3.array() + pt.r4.array() / y.array()) / dy_den).matrix();
        const Eigen::VectorXd dlam = A.ldlt().solve(rhs);
        const Eigen::VectorXd dy =
            ((dlam - pt.r3).array() - pt.r4.array() / y.array()).matrix().cwiseQuotient(
                dy_den.matrix());
        const Eigen::VectorXd ds = (-pt.r2 - s.cwiseProduct(dlam)).cwiseQuotient(lam);
        const Eigen::VectorXd dmu = (-pt.r4 - mu.cwiseProduct(dy)).cwiseQuotient(y);

        // Fraction-to-boundary damping, then a 2-norm line search.
        double t = 1.0;
        auto cap = [&t](const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
          for (int i = 0; i < v.size(); ++i)
            if (dv[i] < 0.0) t = std::min(t, -0.99 * v[i] / dv[i]);
        };
        cap(lam, dlam);
        cap(y, dy);
        cap(s, ds);
        cap(mu, dmu);

        bool accepted = false;
        Eigen::VectorXd lam_t, y_t, s_t, mu_t;
        DualPoint trial;
        for (int halve = 0; halve < 60; ++halve) {
          lam_t = lam + t * dlam;
          y_t = y + t * dy;
          s_t = s + t * ds;
          mu_t = mu + t * dmu;
          trial = eval(lam_t, y_t, s_t, mu_t, epsi);
          if (trial.rnorm < pt.rnorm) {
            accepted = true;
            break;
          }
          t *= 0.5;
        }
        if (!accepted) break;  // stalled; let the stage logic decide
        lam = lam_t;
        y = y_t;
        s = s_t;
        mu = mu_t;
        pt = trial;
      }
      if (epsi <= opts_.kkt_tol) break;
      epsi *= 0.1;
      pt = eval(lam, y, s, mu, epsi);
    }
    if (pt.rmax > 100.0 * opts_.kkt_tol)
      throw MmaError("mma: dual subproblem failed to reach its KKT tolerance");

    return pt.xs;
  }

  int n_, m_;
  MmaOptions opts_;
  int iter_ = 0;
  Eigen::VectorXd x_prev_, x_prev2_, low_, upp_;
};

}  // namespace anisoflow
