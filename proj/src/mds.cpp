#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "lat/errors.hpp"
#include "lat/retrieval.hpp"

namespace lat {

namespace {

using Matrix = std::vector<double>;  // row-major n x n

double frobenius(const Matrix& m) {
  double s = 0.0;
  for (const double x : m) s += x * x;
  return std::sqrt(s);
}

void multiply(const Matrix& m, std::size_t n, const std::vector<double>& v, std::vector<double>& out) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = m.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) s += row[j] * v[j];
    out[i] = s;
  }
}

double normalize(std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x * x;
  const double norm = std::sqrt(s);
  if (norm > 0.0) {
    for (auto& x : v) x /= norm;
  }
  return norm;
}

Matrix double_centered(std::span<const std::vector<double>> points) {
  const std::size_t n = points.size();
  const std::size_t d = points.front().size();
  Matrix sq(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = points[i][c] - points[j][c];
        s += diff * diff;
      }
      sq[i * n + j] = s;
      sq[j * n + i] = s;
    }
  }
  std::vector<double> row_mean(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row_mean[i] += sq[i * n + j];
    grand += row_mean[i];
    row_mean[i] /= static_cast<double>(n);
  }
  grand /= static_cast<double>(n * n);
  Matrix b(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      b[i * n + j] = -0.5 * (sq[i * n + j] - row_mean[i] - row_mean[j] + grand);
    }
  }
  return b;
}

}  // namespace

MdsResult mds_project(std::span<const std::vector<double>> points, const MdsOptions& options) {
  const std::size_t n = points.size();
  if (n < 3) throw ContractError("mds_project: need at least 3 points, got " + std::to_string(n));
  if (options.out_dim == 0 || options.out_dim > n) {
    throw ConfigError("mds_project: out_dim must be in [1, " + std::to_string(n) + "]");
  }
  const std::size_t d = points.front().size();
  for (const auto& p : points) {
    if (p.size() != d || d == 0) throw DimensionError("mds_project: points must share one positive dimension");
  }

  Matrix b = double_centered(points);
  const double b_norm = frobenius(b);
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += b[i * n + i];

  MdsResult result;
  result.points = n;
  result.out_dim = options.out_dim;
  result.coordinates.assign(n * options.out_dim, 0.0);
  result.eigenvalues.assign(options.out_dim, 0.0);
  if (b_norm == 0.0) {
    result.retained_ratio = 1.0;
    return result;
  }

  const double negligible = 1e-12 * b_norm;
  std::mt19937_64 rng(0x6d6473);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n), bv(n);
  double retained = 0.0;
  for (std::size_t k = 0; k < options.out_dim; ++k) {
    for (auto& x : v) x = normal(rng);
    normalize(v);
    if (frobenius(b) <= negligible) break;

    double lambda = 0.0;
    double residual = 0.0;
    bool converged = false;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
      multiply(b, n, v, bv);
      lambda = 0.0;
      for (std::size_t i = 0; i < n; ++i) lambda += v[i] * bv[i];
      residual = 0.0;
      for (std::size_t i = 0; i < n; ++i) residual += (bv[i] - lambda * v[i]) * (bv[i] - lambda * v[i]);
      residual = std::sqrt(residual);
      if (residual <= options.tolerance * b_norm) {
        converged = true;
        break;
      }
      if (normalize(bv) <= negligible) {
        lambda = 0.0;
        converged = true;
        break;
      }
      v.swap(bv);
    }
    if (!converged) {
      std::ostringstream os;
      os << "mds_project: eigenpair " << k + 1 << " did not converge in " << options.max_iterations
         << " iterations (residual " << residual << ", tolerance " << options.tolerance * b_norm << ")";
      throw NumericError(os.str());
    }
    if (lambda <= negligible) break;

    std::size_t pivot = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (std::abs(v[i]) > std::abs(v[pivot])) pivot = i;
    }
    if (v[pivot] < 0.0) {
      for (auto& x : v) x = -x;
    }
    result.eigenvalues[k] = lambda;
    retained += lambda;
    const double root = std::sqrt(lambda);
    for (std::size_t i = 0; i < n; ++i) result.coordinates[i * options.out_dim + k] = v[i] * root;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) b[i * n + j] -= lambda * v[i] * v[j];
    }
  }
  result.retained_ratio = trace > 0.0 ? retained / trace : 1.0;
  return result;
}

namespace {

std::string axis_name(std::size_t k) {
  static const char* names[] = {"x", "y", "z"};
  return k < 3 ? names[k] : "c" + std::to_string(k);
}

}  // namespace

std::string mds_csv(const MdsResult& result, std::span<const std::string> ids,
                    std::span<const std::string> groups) {
  if (ids.size() != result.points || groups.size() != result.points) {
    throw DimensionError("mds_csv: labels do not match the projected points");
  }
  std::ostringstream os;
  os << "id,group";
  for (std::size_t k = 0; k < result.out_dim; ++k) os << ',' << axis_name(k);
  os << '\n';
  for (std::size_t i = 0; i < result.points; ++i) {
    os << ids[i] << ',' << groups[i];
    for (std::size_t k = 0; k < result.out_dim; ++k) {
      os << ',' << format_float(result.coordinates[i * result.out_dim + k]);
    }
    os << '\n';
  }
  return os.str();
}

std::string mds_svg(const MdsResult& result, std::span<const std::string> groups) {
  if (result.out_dim < 2) throw ConfigError("mds_svg: needs at least two coordinates");
  if (groups.size() != result.points) throw DimensionError("mds_svg: one group label per point");
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  std::map<std::string, std::string> colour;
  std::vector<std::string> order;
  for (const auto& g : groups) {
    if (colour.count(g) == 0) {
      colour[g] = palette[colour.size() % std::size(palette)];
      order.push_back(g);
    }
  }

  double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;
  for (std::size_t i = 0; i < result.points; ++i) {
    const double x = result.coordinates[i * result.out_dim];
    const double y = result.coordinates[i * result.out_dim + 1];
    if (i == 0 || x < min_x) min_x = x;
    if (i == 0 || x > max_x) max_x = x;
    if (i == 0 || y < min_y) min_y = y;
    if (i == 0 || y > max_y) max_y = y;
  }
  const double size = 600.0;
  const double margin = 20.0;
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-12});
  const double scale = (size - 2 * margin) / span;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size + 20 * order.size()
     << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < result.points; ++i) {
    const double x = margin + (result.coordinates[i * result.out_dim] - min_x) * scale;
    const double y = size - margin - (result.coordinates[i * result.out_dim + 1] - min_y) * scale;
    os << "<circle cx=\"" << format_float(x) << "\" cy=\"" << format_float(y) << "\" r=\"3\" fill=\""
       << colour[groups[i]] << "\"/>\n";
  }
  for (std::size_t g = 0; g < order.size(); ++g) {
    const double y = size + 15.0 + 20.0 * static_cast<double>(g);
    os << "<circle cx=\"30\" cy=\"" << y - 4 << "\" r=\"5\" fill=\"" << colour[order[g]] << "\"/>"
       << "<text x=\"42\" y=\"" << y << "\" font-size=\"12\">" << order[g] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace lat
