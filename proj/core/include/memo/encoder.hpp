#pragma once

// Relation modeling: per-relation node transforms, one attention-weighted
// graph convolution per relation network, and cross-relation self-attention
// that fuses the P+1 relation-specific representations of every node.
//
// Node numbering: users occupy [0, U), POI l is node U + l. Relations
// 0..P-1 are the user-user social networks; relation P is the user-POI
// visit network.

#include <cstddef>
#include <span>
#include <vector>

#include "memo/data.hpp"
#include "memo/params.hpp"
#include "memo/tensor.hpp"

namespace memo::encoder {

// Neighborhood of every node in compressed form. Entry e belongs to target
// node t with offsets[t] <= e < offsets[t+1]; the first entry of each node
// is the self-edge, followed by neighbors in ascending order.
struct Neighborhoods {
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> source;
    std::vector<std::size_t> target;
};

struct RelationGraphSet {
    std::size_t num_users = 0;
    std::size_t num_pois = 0;
    std::size_t num_social = 0;  // P
    // adjacency[p][node] = sorted neighbor list (without the node itself).
    std::vector<std::vector<std::vector<std::size_t>>> adjacency;

    std::size_t num_nodes() const noexcept { return num_users + num_pois; }
    std::size_t num_relations() const noexcept { return num_social + 1; }
    std::size_t poi_node(data::PoiId l) const noexcept { return num_users + l; }

    bool connected(std::size_t relation, std::size_t a, std::size_t b) const;
    Neighborhoods neighborhoods(std::size_t relation) const;
};

// Social networks from the relation triples; the visit network from distinct
// (user, poi) pairs among `train_events`.
RelationGraphSet build_graphs(std::size_t num_users, std::size_t num_pois, std::size_t num_social,
                              std::span<const data::RelationTriple> relations,
                              std::span<const data::CheckinEvent> train_events);
RelationGraphSet build_graphs(const data::Dataset& dataset, std::span<const data::CheckinEvent> train_events);

enum class FusionMode {
    CrossRelation,  // relation-specific key/query/message projections
    Bilinear,       // shared bilinear scoring over raw representations
};

struct EncoderShape {
    std::size_t num_nodes = 0;
    std::size_t num_relations = 0;  // P + 1
    std::size_t dim = 0;
    std::size_t gcn_layers = 1;
};

struct EncoderParams {
    ad::Tensor embeddings;                           // [N x d], general embeddings x_i
    std::vector<ad::Tensor> transform;               // [P+1] of [d x d]
    std::vector<std::vector<ad::Tensor>> gcn_weight;  // [P+1][layers] of [d x d]
    std::vector<std::vector<ad::Tensor>> attention;   // [P+1][layers] of [2d]
    std::vector<ad::Tensor> key, query, message;     // [P+1] of [d x d]
    ad::Tensor bilinear;                             // [d x d]
    ad::Tensor hidden_weight;                        // [d x (P+1)d]
    ad::Tensor hidden_bias;                          // [d]
    ad::Tensor output_weight;                        // [d x d]
    ad::Tensor output_bias;                          // [d]

    static EncoderParams init(const EncoderShape& shape, Rng& rng);
    EncoderShape shape() const;
    void collect(ParamList& out) const;
};

struct GcnOutput {
    ad::Tensor representation;  // [N x d]
    ad::Tensor weights;         // [E], softmax within each neighborhood
};

struct FusionOutput {
    ad::Tensor fused;                 // [N x d]
    std::vector<ad::Tensor> alpha;    // per query relation p1: [N x (P+1)]
    std::vector<ad::Tensor> combined;  // per p: aggregated messages, [N x d]
};

struct EncoderOptions {
    FusionMode fusion = FusionMode::CrossRelation;
    double leaky_slope = 0.2;
};

// x_i^p = Phi_p x_i for every node, as rows.
ad::Tensor relation_specific_embed(const EncoderParams& params, std::size_t relation);

// One attention-weighted aggregation:
//   g_j = W x_j,  e_ij = leaky(a[:d] . g_i + a[d:] . g_j),
//   h_i = tanh(sum_j softmax_j(e_ij) g_j) over j in N(i) + {i}.
GcnOutput gcn_layer(const Neighborhoods& hood, const ad::Tensor& embeddings, const ad::Tensor& weight,
                    const ad::Tensor& attention, double leaky_slope);

FusionOutput fuse_relations(std::span<const ad::Tensor> relation_reps, const EncoderParams& params,
                            FusionMode mode);

struct EncoderOutput {
    ad::Tensor fused;                              // [N x d]
    std::vector<ad::Tensor> relation_reps;         // [P+1] of [N x d]
    std::vector<std::vector<ad::Tensor>> neighbor_weights;  // [P+1][layers]
    std::vector<ad::Tensor> alpha;
};

// Precomputed neighborhoods for all relations of one graph set.
struct EncoderGraph {
    std::vector<Neighborhoods> hoods;
    explicit EncoderGraph(const RelationGraphSet& graphs);
};

EncoderOutput encode(const EncoderGraph& graph, const EncoderParams& params, const EncoderOptions& options);

}  // namespace memo::encoder
