#include "cine/autograd.hpp"

#include <sstream>
#include <unordered_set>

namespace cine::nn {

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)) {
  Eigen::Index n = 1;
  for (int d : shape_) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    n *= d;
  }
  data_ = Eigen::VectorXd::Constant(n, fill);
}

Tensor::Tensor(Shape shape, Eigen::VectorXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  Eigen::Index n = 1;
  for (int d : shape_) n *= d;
  if (n != data_.size()) throw std::invalid_argument("Tensor: data size does not match shape " + shape_string(shape_));
}

Tensor Tensor::from_image(const RealImage& image) {
  Tensor t({1, static_cast<int>(image.rows()), static_cast<int>(image.cols())});
  t.channel(0) = image;
  return t;
}

RealImage Tensor::to_image(int c) const { return channel(c); }

void Node::accumulate(const Tensor& g) {
  if (grad.empty())
    grad = g;
  else
    grad.vec() += g.vec();
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor::zeros_like(value);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::backward() const {
  if (value().size() != 1) throw std::invalid_argument("backward: implicit seed requires a scalar output");
  backward(Tensor::scalar(1.0));
}

void Var::backward(const Tensor& seed) const {
  if (!seed.same_shape(value())) throw std::invalid_argument("backward: seed shape mismatch");
  if (!node_->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Free intermediate gradients; leaves keep theirs.
  for (Node* n : order)
    if (n->backward_fn) n->grad = Tensor();
}

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_kink_active = false;
thread_local std::uint64_t g_kink_hash = 0;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

KinkMonitor::KinkMonitor() : previous_(g_kink_active), previous_hash_(g_kink_hash) {
  g_kink_active = true;
  g_kink_hash = 0xcbf29ce484222325ULL;
}
KinkMonitor::~KinkMonitor() {
  g_kink_active = previous_;
  g_kink_hash = previous_hash_;
}
std::uint64_t KinkMonitor::signature() const { return g_kink_hash; }
bool KinkMonitor::active() { return g_kink_active; }
void KinkMonitor::record(std::uint64_t decision) {
  g_kink_hash ^= decision + 0x9e3779b97f4a7c15ULL + (g_kink_hash << 6) + (g_kink_hash >> 2);
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& in : inputs)
      if (in.defined() && in.requires_grad()) needs = true;
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    for (auto& in : inputs) {
      if (in.defined())
        node->parents.push_back(in.node());
      else
        node->parents.push_back(std::make_shared<Node>());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

}  // namespace cine::nn
