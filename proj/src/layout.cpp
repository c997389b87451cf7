#include "clintraj/layout.hpp"

#include "clintraj/error.hpp"
#include "format.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <queue>
#include <random>
#include <sstream>

namespace clintraj {

namespace {

Eigen::MatrixXd graph_distances(const PrincipalGraph& g) {
    const auto n = g.node_count();
    const auto adj = g.adjacency();
    Eigen::MatrixXd d = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), -1.0);
    for (std::size_t s = 0; s < n; ++s) {
        std::queue<std::size_t> q;
        d(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)) = 0.0;
        q.push(s);
        while (!q.empty()) {
            const auto v = q.front();
            q.pop();
            for (auto w : adj[v]) {
                auto& dw = d(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(w));
                if (dw < 0.0) {
                    dw = d(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(v)) + 1.0;
                    q.push(w);
                }
            }
        }
    }
    return d;
}

double stress_and_gradient(const Eigen::MatrixXd& d, const Eigen::MatrixX2d& xy, Eigen::MatrixX2d* grad) {
    const auto n = xy.rows();
    double stress = 0.0;
    if (grad) grad->setZero(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double target = d(i, j);
            const double w = 1.0 / (target * target);
            const Eigen::RowVector2d diff = xy.row(i) - xy.row(j);
            const double len = diff.norm();
            const double r = len - target;
            stress += w * r * r;
            if (grad && len > 0.0) {
                const Eigen::RowVector2d gij = (2.0 * w * r / len) * diff;
                grad->row(i) += gij;
                grad->row(j) -= gij;
            }
        }
    }
    return stress;
}

// Top two coordinates of classical MDS, each eigenvector signed so its
// largest-magnitude entry is positive.
Eigen::MatrixX2d classical_mds(const Eigen::MatrixXd& d) {
    const auto n = d.rows();
    const Eigen::MatrixXd j = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    const Eigen::MatrixXd b = -0.5 * j * d.cwiseProduct(d) * j;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b);
    Eigen::MatrixX2d xy = Eigen::MatrixX2d::Zero(n, 2);
    for (int k = 0; k < 2 && k < n; ++k) {
        const Eigen::Index col = n - 1 - k;
        const double lambda = eig.eigenvalues()(col);
        if (!(lambda > 1e-12)) continue;
        Eigen::VectorXd v = eig.eigenvectors().col(col);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        xy.col(k) = v * std::sqrt(lambda);
    }
    return xy;
}

}  // namespace

double layout_stress(const PrincipalGraph& g, const Eigen::MatrixX2d& node_xy) {
    return stress_and_gradient(graph_distances(g), node_xy, nullptr);
}

GraphLayout layout_graph(const PrincipalGraph& g, std::size_t max_iter, double tol) {
    GraphLayout out;
    const auto n = static_cast<Eigen::Index>(g.node_count());
    if (n == 0) {
        out.node_xy.resize(0, 2);
        return out;
    }
    if (!g.is_connected()) throw PreconditionError("layout_graph: graph is not connected");
    const auto d = graph_distances(g);
    out.node_xy = classical_mds(d);
    Eigen::MatrixX2d grad;
    double stress = stress_and_gradient(d, out.node_xy, &grad);
    out.stress_trace.push_back(stress);
    double step = 0.1;
    for (; out.iterations < max_iter; ++out.iterations) {
        const double gnorm2 = grad.squaredNorm();
        if (gnorm2 < 1e-24) break;
        // Armijo backtracking keeps the stress strictly non-increasing.
        Eigen::MatrixX2d trial;
        Eigen::MatrixX2d trial_grad;
        double trial_stress = stress;
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving) {
            trial = out.node_xy - step * grad;
            trial_stress = stress_and_gradient(d, trial, &trial_grad);
            if (trial_stress <= stress - 1e-4 * step * gnorm2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        const double decrease = stress - trial_stress;
        out.node_xy = trial;
        grad = trial_grad;
        stress = trial_stress;
        out.stress_trace.push_back(stress);
        step *= 2.0;
        if (decrease <= tol * std::max(stress, 1e-300)) break;
    }
    return out;
}

double default_scattering(const std::vector<Projection>& projections, const PrincipalGraph& g,
                          const Eigen::MatrixX2d& node_xy) {
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const auto m = v.size();
        return m % 2 == 1 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
    };
    std::vector<double> lengths;
    for (const auto& e : g.edges) {
        lengths.push_back((node_xy.row(static_cast<Eigen::Index>(e.a)) - node_xy.row(static_cast<Eigen::Index>(e.b))).norm());
    }
    std::vector<double> residuals;
    for (const auto& p : projections) {
        const double r = std::sqrt(p.squared_distance);
        if (r > 0.0) residuals.push_back(r);
    }
    if (lengths.empty() || residuals.empty()) return 0.0;
    return 0.25 * median(lengths) / median(residuals);
}

PointLayout layout_points(const Points& x, const PrincipalGraph& g, const Eigen::MatrixX2d& node_xy,
                          std::optional<double> scattering, std::uint64_t seed) {
    if (static_cast<std::size_t>(node_xy.rows()) != g.node_count()) {
        throw PreconditionError("layout_points: node layout does not match the graph");
    }
    const auto projections = project_points(x, g);
    PointLayout out;
    out.scattering = scattering ? *scattering : default_scattering(projections, g, node_xy);
    if (!(out.scattering >= 0.0)) throw PreconditionError("layout_points: scattering must be non-negative");
    const auto n = static_cast<Eigen::Index>(projections.size());
    out.point_xy.resize(n, 2);
    std::mt19937_64 rng(seed);
    const auto partition = g.edges.empty() ? partition_points(x, g) : PartitionVector{};
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& p = projections[static_cast<std::size_t>(i)];
        const int side = (rng() >> 63) != 0 ? 1 : -1;
        const double residual = std::sqrt(p.squared_distance);
        Eigen::RowVector2d base;
        Eigen::RowVector2d normal(0.0, 1.0);
        if (p.edge == Projection::no_edge) {
            base = node_xy.row(static_cast<Eigen::Index>(partition.node[static_cast<std::size_t>(i)]));
        } else {
            const auto& e = g.edges[p.edge];
            const Eigen::RowVector2d a = node_xy.row(static_cast<Eigen::Index>(e.a));
            const Eigen::RowVector2d b = node_xy.row(static_cast<Eigen::Index>(e.b));
            base = (1.0 - p.epsilon) * a + p.epsilon * b;
            const Eigen::RowVector2d dir = b - a;
            const double len = dir.norm();
            if (len > 0.0) normal = Eigen::RowVector2d(-dir(1), dir(0)) / len;
        }
        out.point_xy.row(i) = base + (side * out.scattering * residual) * normal;
        out.side.push_back(side);
        out.residual.push_back(residual);
    }
    return out;
}

std::vector<double> edge_widths(const PrincipalGraph& g, const std::vector<double>& values,
                                const PartitionVector& partition, double min_width, double max_width) {
    if (values.size() != partition.node.size()) throw PreconditionError("edge_widths: values do not match partition");
    const auto n = g.node_count();
    std::vector<double> sum(n, 0.0);
    std::vector<double> count(n, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (std::isnan(values[i])) continue;
        sum[partition.node[i]] += values[i];
        count[partition.node[i]] += 1.0;
    }
    std::vector<double> mean(g.edges.size(), std::numeric_limits<double>::quiet_NaN());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& e = g.edges[k];
        const double c = count[e.a] + count[e.b];
        if (c == 0.0) continue;
        mean[k] = (sum[e.a] + sum[e.b]) / c;
        lo = std::min(lo, mean[k]);
        hi = std::max(hi, mean[k]);
    }
    std::vector<double> widths(g.edges.size(), min_width);
    // Relative tolerance so that rounding noise in a constant variable keeps widths equal.
    if (!(hi - lo > 1e-12 * std::max(1.0, std::abs(hi)))) return widths;
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        if (std::isnan(mean[k])) continue;
        widths[k] = min_width + (mean[k] - lo) / (hi - lo) * (max_width - min_width);
    }
    return widths;
}

NodeComposition node_composition(const PrincipalGraph& g, const std::vector<std::string>& labels,
                                 const PartitionVector& partition) {
    if (labels.size() != partition.node.size()) throw PreconditionError("node_composition: labels do not match partition");
    NodeComposition out;
    std::map<std::string, Eigen::Index> index;
    for (const auto& l : labels) index.emplace(l, 0);
    for (auto& [name, k] : index) {
        k = static_cast<Eigen::Index>(out.categories.size());
        out.categories.push_back(name);
    }
    const auto n = g.node_count();
    out.counts.assign(n, 0);
    out.fractions = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out.categories.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto v = partition.node[i];
        out.fractions(static_cast<Eigen::Index>(v), index[labels[i]]) += 1.0;
        ++out.counts[v];
    }
    for (std::size_t v = 0; v < n; ++v) {
        if (out.counts[v] > 0) out.fractions.row(static_cast<Eigen::Index>(v)) /= static_cast<double>(out.counts[v]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string color(std::size_t k) { return kPalette[k % (sizeof kPalette / sizeof kPalette[0])]; }

std::string num(double v) { return detail::format_fixed(v, 2); }

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string render_svg(const Layout2D& layout, const SvgStyle& style) {
    const auto n_nodes = layout.node_xy.rows();
    const auto n_points = layout.point_xy.rows();
    double min_x = 0, max_x = 1, min_y = 0, max_y = 1;
    if (n_nodes + n_points > 0) {
        min_x = min_y = std::numeric_limits<double>::infinity();
        max_x = max_y = -min_x;
        auto include = [&](const Eigen::MatrixX2d& m) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                min_x = std::min(min_x, m(i, 0));
                max_x = std::max(max_x, m(i, 0));
                min_y = std::min(min_y, m(i, 1));
                max_y = std::max(max_y, m(i, 1));
            }
        };
        include(layout.node_xy);
        include(layout.point_xy);
    }
    const double span = std::max({max_x - min_x, max_y - min_y, 1e-9});
    const double scale = std::min(style.width, style.height) - 2.0 * style.margin;
    auto sx = [&](double v) { return style.margin + (v - min_x) / span * scale; };
    auto sy = [&](double v) { return style.height - style.margin - (v - min_y) / span * scale; };

    std::vector<std::size_t> degree(static_cast<std::size_t>(n_nodes), 0);
    for (const auto& e : layout.edges) {
        ++degree[e.a];
        ++degree[e.b];
    }

    std::map<std::string, std::size_t> class_color;
    for (const auto& c : layout.point_classes) class_color.emplace(c, 0);
    {
        std::size_t k = 0;
        for (auto& [name, idx] : class_color) idx = k++;
    }

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(style.width) << "\" height=\""
        << num(style.height) << "\" viewBox=\"0 0 " << num(style.width) << ' ' << num(style.height) << "\">\n";
    if (!style.title.empty()) svg << "<title>" << escape(style.title) << "</title>\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    svg << "<g id=\"points\">\n";
    for (Eigen::Index i = 0; i < n_points; ++i) {
        const auto fill = layout.point_classes.empty()
                              ? std::string("#999999")
                              : color(class_color[layout.point_classes[static_cast<std::size_t>(i)]]);
        svg << "<circle class=\"point\" cx=\"" << num(sx(layout.point_xy(i, 0))) << "\" cy=\""
            << num(sy(layout.point_xy(i, 1))) << "\" r=\"" << num(style.point_radius) << "\" fill=\"" << fill
            << "\" fill-opacity=\"0.6\"/>\n";
    }
    svg << "</g>\n<g id=\"edges\">\n";
    for (std::size_t k = 0; k < layout.edges.size(); ++k) {
        const auto& e = layout.edges[k];
        const double w = layout.widths.empty() ? 2.0 : layout.widths[k];
        svg << "<line class=\"edge\" x1=\"" << num(sx(layout.node_xy(static_cast<Eigen::Index>(e.a), 0))) << "\" y1=\""
            << num(sy(layout.node_xy(static_cast<Eigen::Index>(e.a), 1))) << "\" x2=\""
            << num(sx(layout.node_xy(static_cast<Eigen::Index>(e.b), 0))) << "\" y2=\""
            << num(sy(layout.node_xy(static_cast<Eigen::Index>(e.b), 1))) << "\" stroke=\"#333333\" stroke-width=\""
            << num(w) << "\" stroke-linecap=\"round\"/>\n";
    }
    svg << "</g>\n<g id=\"nodes\">\n";
    std::size_t max_count = 0;
    if (layout.composition) {
        for (auto c : layout.composition->counts) max_count = std::max(max_count, c);
    }
    for (Eigen::Index v = 0; v < n_nodes; ++v) {
        const double cx = sx(layout.node_xy(v, 0));
        const double cy = sy(layout.node_xy(v, 1));
        const auto uv = static_cast<std::size_t>(v);
        std::string cls = "node";
        if (layout.root && *layout.root == uv) {
            cls += " root";
        } else if (degree[uv] == 1) {
            cls += " leaf";
        }
        if (layout.composition && max_count > 0 && layout.composition->counts[uv] > 0) {
            const auto& comp = *layout.composition;
            const double r = style.pie_radius * std::sqrt(static_cast<double>(comp.counts[uv]) / static_cast<double>(max_count));
            svg << "<g class=\"pie\" data-node=\"" << v << "\" data-count=\"" << comp.counts[uv] << "\">\n";
            double start = 0.0;
            for (Eigen::Index c = 0; c < comp.fractions.cols(); ++c) {
                const double f = comp.fractions(v, c);
                if (f <= 0.0) continue;
                const auto fill = color(static_cast<std::size_t>(c));
                if (f >= 1.0 - 1e-12) {
                    svg << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r) << "\" fill=\"" << fill
                        << "\"/>\n";
                    break;
                }
                const double a0 = 2.0 * std::numbers::pi * start;
                const double a1 = 2.0 * std::numbers::pi * (start + f);
                svg << "<path d=\"M" << num(cx) << ',' << num(cy) << " L" << num(cx + r * std::sin(a0)) << ','
                    << num(cy - r * std::cos(a0)) << " A" << num(r) << ',' << num(r) << " 0 " << (f > 0.5 ? 1 : 0)
                    << ",1 " << num(cx + r * std::sin(a1)) << ',' << num(cy - r * std::cos(a1)) << " Z\" fill=\"" << fill
                    << "\"/>\n";
                start += f;
            }
            svg << "</g>\n";
        }
        svg << "<circle class=\"" << cls << "\" data-node=\"" << v << "\" cx=\"" << num(cx) << "\" cy=\"" << num(cy)
            << "\" r=\"" << num(style.node_radius) << "\" fill=\"" << (cls == "node" ? "#333333" : "#000000")
            << "\"/>\n";
    }
    svg << "</g>\n";

    std::vector<std::pair<std::string, std::string>> legend;
    if (layout.composition) {
        for (std::size_t c = 0; c < layout.composition->categories.size(); ++c) {
            legend.emplace_back(layout.composition->categories[c], color(c));
        }
    } else {
        for (const auto& [name, idx] : class_color) legend.emplace_back(name, color(idx));
    }
    if (!legend.empty()) {
        svg << "<g id=\"legend\" font-family=\"sans-serif\" font-size=\"11\">\n";
        for (std::size_t k = 0; k < legend.size(); ++k) {
            const double y = 14.0 + 14.0 * static_cast<double>(k);
            svg << "<rect x=\"8\" y=\"" << num(y - 9.0) << "\" width=\"10\" height=\"10\" fill=\"" << legend[k].second
                << "\"/><text x=\"22\" y=\"" << num(y) << "\">" << escape(legend[k].first) << "</text>\n";
        }
        svg << "</g>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string layout_to_json(const Layout2D& layout) {
    nlohmann::ordered_json doc;
    auto rows = [](const Eigen::MatrixX2d& m) {
        nlohmann::ordered_json a = nlohmann::ordered_json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back({m(i, 0), m(i, 1)});
        return a;
    };
    doc["nodes_xy"] = rows(layout.node_xy);
    doc["points_xy"] = rows(layout.point_xy);
    doc["edges"] = nlohmann::ordered_json::array();
    for (const auto& e : layout.edges) doc["edges"].push_back({e.a, e.b});
    doc["scattering"] = layout.scattering;
    doc["widths"] = layout.widths;
    if (layout.composition) {
        nlohmann::ordered_json comp;
        comp["categories"] = layout.composition->categories;
        comp["counts"] = layout.composition->counts;
        comp["fractions"] = nlohmann::ordered_json::array();
        for (Eigen::Index v = 0; v < layout.composition->fractions.rows(); ++v) {
            std::vector<double> row(layout.composition->fractions.row(v).begin(), layout.composition->fractions.row(v).end());
            comp["fractions"].push_back(row);
        }
        doc["compositions"] = comp;
    } else {
        doc["compositions"] = nullptr;
    }
    if (layout.root) {
        doc["root"] = *layout.root;
    } else {
        doc["root"] = nullptr;
    }
    return doc.dump(2);
}

}  // namespace clintraj
