#include "c2f/optim.hpp"

#include <cmath>

namespace c2f {

bool Optimizer::decay_applies(const std::string& name) {
  // weights only: no decay on biases, norm gains/shifts, or the temperature
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name
                                                    : name.substr(dot + 1);
  if (leaf == "log_inv_tau") return false;
  if (!leaf.empty() && leaf[0] == 'b') return false;             // bq, b_mlp_*
  if (leaf.size() >= 2 && leaf.compare(leaf.size() - 2, 2, "_b") == 0) {
    return false;                                                // patch_b
  }
  if (leaf.find("gamma") != std::string::npos ||
      leaf.find("beta") != std::string::npos) {
    return false;                                                // layer norms
  }
  return true;
}

void Optimizer::reset_state(const std::string& name) { states_.erase(name); }

void Optimizer::step(
    const std::vector<std::pair<std::string, Tensor>>& params, double lr) {
  for (const auto& [name, t] : params) {
    if (!t.requires_grad()) continue;
    Tensor param = t;
    auto& st = states_[name];
    const size_t n = param.numel();
    if (st.m.size() != n) {
      st.m.assign(n, 0.0);
      st.step = 0;
      st.v.clear();
      st.v_row.clear();
      st.v_col.clear();
    }
    st.step += 1;
    const auto& g = param.grad();
    auto& p = param.data();
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.step));
    const bool use_factored = cfg_.factored && param.ndim() == 2;

    for (size_t i = 0; i < n; ++i) {
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
    }

    if (use_factored) {
      const size_t rows = static_cast<size_t>(param.dim(0));
      const size_t cols = static_cast<size_t>(param.dim(1));
      if (st.v_row.size() != rows) st.v_row.assign(rows, 0.0);
      if (st.v_col.size() != cols) st.v_col.assign(cols, 0.0);
      for (size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (size_t c = 0; c < cols; ++c) {
          const double gi = g[r * cols + c];
          acc += gi * gi;
        }
        st.v_row[r] =
            cfg_.beta2 * st.v_row[r] + (1.0 - cfg_.beta2) * acc / cols;
      }
      for (size_t c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (size_t r = 0; r < rows; ++r) {
          const double gi = g[r * cols + c];
          acc += gi * gi;
        }
        st.v_col[c] =
            cfg_.beta2 * st.v_col[c] + (1.0 - cfg_.beta2) * acc / rows;
      }
      double row_mean = 0.0;
      for (double v : st.v_row) row_mean += v;
      row_mean /= rows;
      const double denom_guard = row_mean > 0.0 ? row_mean : 1.0;
      for (size_t r = 0; r < rows; ++r) {
        for (size_t c = 0; c < cols; ++c) {
          const size_t i = r * cols + c;
          const double vhat =
              (st.v_row[r] * st.v_col[c] / denom_guard) / bc2;
          const double mhat = st.m[i] / bc1;
          p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
      }
    } else {
      if (st.v.size() != n) st.v.assign(n, 0.0);
      for (size_t i = 0; i < n; ++i) {
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }

    if (cfg_.weight_decay > 0.0 && decay_applies(name)) {
      const double f = lr * cfg_.weight_decay;
      for (size_t i = 0; i < n; ++i) p[i] -= f * p[i];
    }
    param.zero_grad();
  }
}

}  // namespace c2f
