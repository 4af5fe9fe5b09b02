#include "memo/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "memo/error.hpp"

namespace memo::encoder {

bool RelationGraphSet::connected(std::size_t relation, std::size_t a, std::size_t b) const {
    const auto& nb = adjacency.at(relation).at(a);
    return std::binary_search(nb.begin(), nb.end(), b);
}

Neighborhoods RelationGraphSet::neighborhoods(std::size_t relation) const {
    const auto& adj = adjacency.at(relation);
    Neighborhoods h;
    h.offsets.reserve(adj.size() + 1);
    h.offsets.push_back(0);
    for (std::size_t i = 0; i < adj.size(); ++i) {
        h.source.push_back(i);
        h.target.push_back(i);
        for (auto j : adj[i]) {
            h.source.push_back(j);
            h.target.push_back(i);
        }
        h.offsets.push_back(h.source.size());
    }
    return h;
}

RelationGraphSet build_graphs(std::size_t num_users, std::size_t num_pois, std::size_t num_social,
                              std::span<const data::RelationTriple> relations,
                              std::span<const data::CheckinEvent> train_events) {
    if (train_events.empty()) throw ContractError("build_graphs: empty training split");
    RelationGraphSet g;
    g.num_users = num_users;
    g.num_pois = num_pois;
    g.num_social = num_social;
    const std::size_t n = g.num_nodes();
    g.adjacency.assign(num_social + 1, std::vector<std::vector<std::size_t>>(n));

    for (const auto& r : relations) {
        if (r.type >= num_social || r.a >= num_users || r.b >= num_users) {
            throw RangeError("build_graphs: relation (" + std::to_string(r.a) + ", " + std::to_string(r.b) + ", " +
                             std::to_string(r.type) + ") out of range");
        }
        if (r.a == r.b) continue;
        g.adjacency[r.type][r.a].push_back(r.b);
        g.adjacency[r.type][r.b].push_back(r.a);
    }
    auto& visits = g.adjacency[num_social];
    for (const auto& e : train_events) {
        if (e.user >= num_users || e.poi >= num_pois) throw RangeError("build_graphs: event id out of range");
        visits[e.user].push_back(g.poi_node(e.poi));
        visits[g.poi_node(e.poi)].push_back(e.user);
    }
    for (auto& rel : g.adjacency)
        for (auto& nb : rel) {
            std::sort(nb.begin(), nb.end());
            nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
        }
    return g;
}

RelationGraphSet build_graphs(const data::Dataset& dataset, std::span<const data::CheckinEvent> train_events) {
    return build_graphs(dataset.num_users, dataset.num_pois(), dataset.num_relation_types, dataset.relations,
                        train_events);
}

EncoderParams EncoderParams::init(const EncoderShape& s, Rng& rng) {
    if (s.num_relations == 0 || s.dim == 0 || s.gcn_layers == 0) {
        throw ContractError("EncoderParams::init: relations, dim and layers must be positive");
    }
    const std::size_t d = s.dim;
    EncoderParams p;
    p.embeddings = normal_matrix(rng, s.num_nodes, d, 1.0 / std::sqrt(static_cast<double>(d)));
    for (std::size_t r = 0; r < s.num_relations; ++r) {
        p.transform.push_back(glorot(rng, d, d));
        std::vector<ad::Tensor> w, a;
        for (std::size_t l = 0; l < s.gcn_layers; ++l) {
            w.push_back(glorot(rng, d, d));
            a.push_back(glorot_vector(rng, 2 * d, 2 * d, 1));
        }
        p.gcn_weight.push_back(std::move(w));
        p.attention.push_back(std::move(a));
        p.key.push_back(glorot(rng, d, d));
        p.query.push_back(glorot(rng, d, d));
        p.message.push_back(glorot(rng, d, d));
    }
    p.bilinear = glorot(rng, d, d);
    p.hidden_weight = glorot(rng, d, s.num_relations * d);
    p.hidden_bias = zeros_param({d});
    p.output_weight = glorot(rng, d, d);
    p.output_bias = zeros_param({d});
    return p;
}

EncoderShape EncoderParams::shape() const {
    return {embeddings.rows(), transform.size(), embeddings.cols(), gcn_weight.empty() ? 0 : gcn_weight[0].size()};
}

void EncoderParams::collect(ParamList& out) const {
    out.push_back({"encoder.embeddings", embeddings});
    for (std::size_t r = 0; r < transform.size(); ++r) {
        const std::string pre = "encoder.rel" + std::to_string(r) + ".";
        out.push_back({pre + "transform", transform[r]});
        for (std::size_t l = 0; l < gcn_weight[r].size(); ++l) {
            out.push_back({pre + "gcn" + std::to_string(l) + ".weight", gcn_weight[r][l]});
            out.push_back({pre + "gcn" + std::to_string(l) + ".attention", attention[r][l]});
        }
        out.push_back({pre + "key", key[r]});
        out.push_back({pre + "query", query[r]});
        out.push_back({pre + "message", message[r]});
    }
    out.push_back({"encoder.bilinear", bilinear});
    out.push_back({"encoder.mlp.hidden_weight", hidden_weight});
    out.push_back({"encoder.mlp.hidden_bias", hidden_bias});
    out.push_back({"encoder.mlp.output_weight", output_weight});
    out.push_back({"encoder.mlp.output_bias", output_bias});
}

ad::Tensor relation_specific_embed(const EncoderParams& params, std::size_t relation) {
    if (relation >= params.transform.size()) {
        throw RangeError("relation_specific_embed: relation " + std::to_string(relation) + " out of range");
    }
    // Rows are nodes, so X Phi^T holds Phi x_i in row i.
    return ad::matmul(params.embeddings, ad::transpose(params.transform[relation]));
}

GcnOutput gcn_layer(const Neighborhoods& hood, const ad::Tensor& embeddings, const ad::Tensor& weight,
                    const ad::Tensor& attention, double leaky_slope) {
    const std::size_t d = weight.rows();
    if (hood.offsets.size() != embeddings.rows() + 1) {
        throw DimensionError("gcn_layer: neighborhoods cover " + std::to_string(hood.offsets.size() - 1) +
                             " nodes, embeddings " + std::to_string(embeddings.rows()));
    }
    if (attention.size() != 2 * d) throw DimensionError("gcn_layer: attention vector must have 2d entries");

    const ad::Tensor g = ad::matmul(embeddings, ad::transpose(weight));
    const ad::Tensor self_score = ad::matvec(g, ad::slice(attention, 0, d));
    const ad::Tensor other_score = ad::matvec(g, ad::slice(attention, d, d));
    const ad::Tensor logits =
        ad::leaky_relu(ad::add(ad::gather(self_score, hood.target), ad::gather(other_score, hood.source)), leaky_slope);
    ad::Tensor weights = ad::segment_softmax(logits, hood.offsets);
    ad::Tensor agg = ad::segment_weighted_sum(g, hood.source, weights, hood.offsets);
    return {ad::tanh(agg), std::move(weights)};
}

FusionOutput fuse_relations(std::span<const ad::Tensor> reps, const EncoderParams& params, FusionMode mode) {
    const std::size_t R = reps.size();
    if (R == 0 || R != params.transform.size()) {
        throw DimensionError("fuse_relations: expected " + std::to_string(params.transform.size()) +
                             " relation representations, got " + std::to_string(R));
    }
    const std::size_t d = reps[0].cols();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<ad::Tensor> keys, queries, messages;
    if (mode == FusionMode::CrossRelation) {
        for (std::size_t p = 0; p < R; ++p) {
            keys.push_back(ad::matmul(reps[p], ad::transpose(params.key[p])));
            queries.push_back(ad::matmul(reps[p], ad::transpose(params.query[p])));
            messages.push_back(ad::matmul(reps[p], ad::transpose(params.message[p])));
        }
    } else {
        // h^{p1}^T W h^{p2} = rowwise_dot(H_{p1}, H_{p2} W^T); messages are the raw representations.
        const ad::Tensor wt = ad::transpose(params.bilinear);
        for (std::size_t p = 0; p < R; ++p) {
            keys.push_back(ad::matmul(reps[p], wt));
            queries.push_back(reps[p]);
            messages.push_back(reps[p]);
        }
    }

    FusionOutput out;
    for (std::size_t p1 = 0; p1 < R; ++p1) {
        std::vector<ad::Tensor> scores;
        scores.reserve(R);
        for (std::size_t p2 = 0; p2 < R; ++p2) {
            ad::Tensor s = ad::rowwise_dot(queries[p1], keys[p2]);
            scores.push_back(mode == FusionMode::CrossRelation ? ad::scale(s, inv_sqrt_d) : s);
        }
        ad::Tensor alpha = ad::softmax_rows(ad::stack_columns(scores));
        std::vector<ad::Tensor> terms;
        terms.reserve(R);
        for (std::size_t p2 = 0; p2 < R; ++p2) terms.push_back(ad::scale_rows(messages[p2], ad::column(alpha, p2)));
        out.combined.push_back(ad::add_n(terms));
        out.alpha.push_back(std::move(alpha));
    }

    const ad::Tensor cat = ad::hconcat(out.combined);
    const ad::Tensor hidden =
        ad::tanh(ad::add_rowwise(ad::matmul(cat, ad::transpose(params.hidden_weight)), params.hidden_bias));
    out.fused = ad::add_rowwise(ad::matmul(hidden, ad::transpose(params.output_weight)), params.output_bias);
    return out;
}

EncoderGraph::EncoderGraph(const RelationGraphSet& graphs) {
    for (std::size_t p = 0; p < graphs.num_relations(); ++p) hoods.push_back(graphs.neighborhoods(p));
}

EncoderOutput encode(const EncoderGraph& graph, const EncoderParams& params, const EncoderOptions& options) {
    const std::size_t R = params.transform.size();
    if (graph.hoods.size() != R) throw DimensionError("encode: graph and parameters disagree on relation count");
    EncoderOutput out;
    out.neighbor_weights.resize(R);
    for (std::size_t p = 0; p < R; ++p) {
        ad::Tensor h = relation_specific_embed(params, p);
        for (std::size_t l = 0; l < params.gcn_weight[p].size(); ++l) {
            GcnOutput layer = gcn_layer(graph.hoods[p], h, params.gcn_weight[p][l], params.attention[p][l],
                                        options.leaky_slope);
            h = std::move(layer.representation);
            out.neighbor_weights[p].push_back(std::move(layer.weights));
        }
        out.relation_reps.push_back(std::move(h));
    }
    FusionOutput fusion = fuse_relations(out.relation_reps, params, options.fusion);
    out.fused = std::move(fusion.fused);
    out.alpha = std::move(fusion.alpha);
    return out;
}

}  // namespace memo::encoder
