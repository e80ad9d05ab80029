#include "slidenav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>

#include "slidenav/errors.hpp"

namespace slidenav {

namespace {

void check_shapes(const ImageF& p, const ImageF& g, const char* where) {
    if (p.width != g.width || p.height != g.height || p.channels != g.channels)
        throw DimensionMismatchError(std::string(where) + ": shape mismatch");
    if (p.empty()) throw DimensionMismatchError(std::string(where) + ": empty maps");
}

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

// indices sorted by descending value, ties by ascending index
std::vector<int> descending_order(const std::vector<double>& v) {
    std::vector<int> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (v[static_cast<std::size_t>(a)] != v[static_cast<std::size_t>(b)])
            return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)];
        return a < b;
    });
    return order;
}

ImageF mask_on_grid(const ImageF& p, const ImageF& mask) {
    if (mask.width == p.width && mask.height == p.height) return mask;
    return resize_max(mask, p.width, p.height);
}

}  // namespace

double spearman(const ImageF& p, const ImageF& g) {
    check_shapes(p, g, "spearman");
    const auto rp = average_ranks(p.data);
    const auto rg = average_ranks(g.data);
    const std::size_t n = rp.size();
    double mp = 0.0, mg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mp += rp[i];
        mg += rg[i];
    }
    mp /= static_cast<double>(n);
    mg /= static_cast<double>(n);
    double cov = 0.0, vp = 0.0, vg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (rp[i] - mp) * (rg[i] - mg);
        vp += (rp[i] - mp) * (rp[i] - mp);
        vg += (rg[i] - mg) * (rg[i] - mg);
    }
    if (vp == 0.0 || vg == 0.0)
        throw MetricError("spearman: correlation undefined for constant input");
    return cov / std::sqrt(vp * vg);
}

double ap_top5(const ImageF& p, const ImageF& g) {
    check_shapes(p, g, "ap_top5");
    const std::size_t n = p.size();
    const std::size_t k = static_cast<std::size_t>(
        std::ceil(0.05 * static_cast<double>(n)));

    const auto g_order = descending_order(g.data);
    std::vector<char> positive(n, 0);
    for (std::size_t i = 0; i < k; ++i) positive[static_cast<std::size_t>(g_order[i])] = 1;

    const auto p_order = descending_order(p.data);
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < n; ++rank) {
        if (positive[static_cast<std::size_t>(p_order[rank])]) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
    }
    return ap / static_cast<double>(k);
}

double js_divergence(const ImageF& p, const ImageF& g) {
    check_shapes(p, g, "js_divergence");
    double sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.data[i] < 0.0 || g.data[i] < 0.0)
            throw MetricError("js_divergence: negative mass");
        sp += p.data[i];
        sg += g.data[i];
    }
    if (sp <= 0.0 || sg <= 0.0) throw MetricError("js_divergence: zero-mass map");

    double js = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = p.data[i] / sp;
        const double qi = g.data[i] / sg;
        const double mi = 0.5 * (pi + qi);
        if (pi > 0.0) js += 0.5 * pi * std::log2(pi / mi);
        if (qi > 0.0) js += 0.5 * qi * std::log2(qi / mi);
    }
    return std::clamp(js, 0.0, 1.0);
}

double ranked_precision(const ImageF& p, const ImageF& tumor_mask, double q) {
    const ImageF mask = mask_on_grid(p, tumor_mask);
    check_shapes(p, mask, "ranked_precision");
    bool any = false;
    for (double v : mask.data)
        if (v > 0.5) {
            any = true;
            break;
        }
    if (!any) {
        std::cerr << "[slidenav] warning: ranked_precision on empty tumor mask, defined as 0\n";
        return 0.0;
    }
    const std::size_t n = p.size();
    const std::size_t k =
        static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    const auto order = descending_order(p.data);
    std::size_t inside = 0;
    for (std::size_t i = 0; i < k; ++i)
        if (mask.data[static_cast<std::size_t>(order[i])] > 0.5) ++inside;
    return static_cast<double>(inside) / static_cast<double>(k);
}

double tumor_recall(const ImageF& p, const ImageF& tumor_mask, double q) {
    const ImageF mask = mask_on_grid(p, tumor_mask);
    check_shapes(p, mask, "tumor_recall");
    std::size_t tumor_cells = 0;
    for (double v : mask.data)
        if (v > 0.5) ++tumor_cells;
    if (tumor_cells == 0) throw MetricError("tumor_recall: undefined for empty mask");

    const std::size_t n = p.size();
    const std::size_t k =
        static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    const auto order = descending_order(p.data);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < k; ++i)
        if (mask.data[static_cast<std::size_t>(order[i])] > 0.5) ++covered;
    return static_cast<double>(covered) / static_cast<double>(tumor_cells);
}

void write_metric_report_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write metric report to " + path);
    out << "slide_id,level,rho,ap5,jsd,p10,rec\n";
    for (const auto& r : rows)
        out << r.slide_id << "," << r.level << "," << r.rho << "," << r.ap5 << "," << r.jsd << ","
            << r.p10 << "," << r.rec << "\n";

    std::map<int, std::vector<const MetricRow*>> by_level;
    for (const auto& r : rows) by_level[r.level].push_back(&r);
    auto emit_aggregate = [&](const std::string& id, const std::vector<const MetricRow*>& group,
                              int level) {
        if (group.empty()) return;
        MetricRow agg;
        for (const auto* r : group) {
            agg.rho += r->rho;
            agg.ap5 += r->ap5;
            agg.jsd += r->jsd;
            agg.p10 += r->p10;
            agg.rec += r->rec;
        }
        const double n = static_cast<double>(group.size());
        out << id << "," << level << "," << agg.rho / n << "," << agg.ap5 / n << ","
            << agg.jsd / n << "," << agg.p10 / n << "," << agg.rec / n << "\n";
    };
    for (const auto& [level, group] : by_level) emit_aggregate("aggregate_level", group, level);
    std::vector<const MetricRow*> all;
    for (const auto& r : rows) all.push_back(&r);
    emit_aggregate("aggregate_overall", all, -1);
}

}  // namespace slidenav
