#pragma once

#include "comen/layers.hpp"
#include "comen/ops.hpp"
#include "comen/pipeline.hpp"
#include "comen/proto_contrast.hpp"
#include "comen/proto_graph.hpp"
#include "comen/prototype_bank.hpp"
#include "support.hpp"

#include <random>
#include <vector>

namespace comen::testing {

// A small stage-2 objective over free embeddings: classifier CE plus the
// prototype graph and contrastive terms on a blended bank.
struct MicroInstance {
  Tensor embeddings;  // B x d leaf
  std::vector<int> labels;
  RowMatrix assignments;
  Linear classifier;
  ProtoGR graph_model;
  PrototypeBank bank;
  int classes;

  MicroInstance(std::mt19937_64& rng, Index batch, int domains, int classes_, Index dim)
      : embeddings(random_tensor(rng, {batch, dim}, -1.0, 1.0, true)),
        assignments(random_assignments(rng, batch, domains).matrix()),
        classifier(Linear::init(dim, classes_, rng)),
        graph_model(ProtoGR::init(dim, classes_, rng)),
        bank(domains, classes_, dim, 0.7),
        classes(classes_) {
    for (Index i = 0; i < batch; ++i) labels.push_back(static_cast<int>(i % classes_));
    const RowMatrix prev = random_tensor(rng, {domains * classes_, dim}).matrix();
    bank.initialize(prev, std::vector<bool>(static_cast<std::size_t>(domains * classes_), true));
  }

  Tensor cls() const { return classification_loss(classifier.forward(embeddings), labels); }

  PrototypeGraph graph() const {
    const LocalPrototypes local = local_prototypes(embeddings, labels, assignments, classes);
    return make_prototype_graph(bank.blend(local), bank.usable(local.present), classes, 0.5);
  }

  Tensor protogr() const { return graph_model.loss(graph()); }

  Tensor protoccl() const {
    const PrototypeGraph g = graph();
    return protoccl_loss(g.features, g.labels, ContrastOptions{0.5, true});
  }

  Tensor total() const { return total_loss(cls(), protogr(), protoccl()); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out{embeddings, classifier.weight, classifier.bias};
    for (const Tensor& p : graph_model.parameters()) out.push_back(p);
    return out;
  }
};

}  // namespace comen::testing
