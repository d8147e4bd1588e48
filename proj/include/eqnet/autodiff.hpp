#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "eqnet/ops.hpp"
#include "eqnet/tensor.hpp"

namespace eqnet {

enum class OpKind {
  input,
  param,
  conv,
  relu,
  maxpool,
  upsample_nn,
  upconv,
  crop,
  pad,
  concat,
  add,
  scale,
  sum,
};

// Recorded forward graph. Values are computed eagerly at node creation;
// backward() runs the adjoint sweep in reverse creation order (creation
// order is a topological order by construction, so the graph is acyclic).
class Tape {
 public:
  using Id = int32_t;

  Id input(Tensor value, std::string name = "input");
  Id param(Tensor value, std::string name);

  Id conv(Id in, Id kernel, Id bias, ops::Padding padding);
  Id relu(Id in);
  Id maxpool(Id in, int64_t f);
  Id upsample_nn(Id in, int64_t f);
  Id upconv(Id in, Id kernel, int64_t f);
  Id crop(Id in, std::vector<int64_t> offset, std::vector<int64_t> size);
  Id pad_zero(Id in, std::vector<int64_t> lo, std::vector<int64_t> hi);
  Id concat(Id a, Id b);
  // Central crop of skip to up's spatial size followed by channel concat.
  Id concat_crop(Id skip, Id up);
  Id add(Id a, Id b);
  Id scale(Id a, double s);
  Id sum(Id a);  // reduces to a scalar node of shape {1}

  const Tensor& value(Id id) const;
  // Gradient of the last backward() seed w.r.t. node id; zeros if the node
  // was unreachable from the seed.
  Tensor grad(Id id) const;

  // Seeds are 1 for a scalar root. Errors if the root is not scalar.
  void backward(Id root);
  // General entry: seed must match the root value's shape.
  void backward(Id root, const Tensor& seed);

  // name -> gradient for every param node, after backward().
  std::map<std::string, Tensor> param_gradients() const;

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    std::vector<Id> inputs;
    Tensor value;
    std::string name;
    ops::Padding padding = ops::Padding::valid;
    int64_t factor = 0;
    std::vector<int64_t> argmax;
    std::vector<int64_t> offset;  // crop offset / pad lo
    std::vector<int64_t> aux;     // crop size / pad hi
    double scalar = 0.0;
  };

  Id push(Node n);
  const Node& at(Id id) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool has_grads_ = false;
};

// Finite-difference verification of the adjoints. A builder constructs the
// graph from the given leaf tensors and reports the loss node plus the leaf
// node ids, in the same order as the tensors.
struct BuiltGraph {
  Tape::Id loss;
  std::vector<Tape::Id> leaves;
};
using GraphBuilder = std::function<BuiltGraph(Tape&, const std::vector<Tensor>&)>;

struct GradCheckEntry {
  std::string leaf;
  double max_rel_err;
};
struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::vector<GradCheckEntry> entries;
};

GradCheckReport grad_check(const GraphBuilder& builder, const std::vector<Tensor>& base_leaves,
                           const std::vector<std::string>& leaf_names, double h, double tol);

// Seeded stock graphs: conv+relu, a maxpool chain, and a one-level
// encoder-decoder net assembled directly on the tape.
GradCheckReport grad_check_conv_relu(uint64_t seed);
GradCheckReport grad_check_maxpool_chain(uint64_t seed);
GradCheckReport grad_check_unet_one_level(uint64_t seed);

}  // namespace eqnet
