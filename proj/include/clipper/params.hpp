#pragma once

#include <deque>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "clipper/rng.hpp"
#include "clipper/tensor.hpp"

namespace clipper {

// Ordered collection of named parameters. Insertion order is the canonical
// iteration order (optimizer updates, checkpoint layout).
class ParamStore {
 public:
  ad::Parameter& create(std::string name, ad::Shape shape,
                        std::vector<double> init);
  ad::Parameter& create_trunc_normal(std::string name, ad::Shape shape,
                                     Rng& rng, double scale = 0.02);
  ad::Parameter& create_fill(std::string name, ad::Shape shape, double fill);

  ad::Parameter& at(const std::string& name);
  const ad::Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::deque<ad::Parameter>& all() { return params_; }
  const std::deque<ad::Parameter>& all() const { return params_; }
  std::size_t count() const { return params_.size(); }
  std::size_t total_values() const;

 private:
  std::deque<ad::Parameter> params_;  // stable addresses
  std::unordered_map<std::string, ad::Parameter*> index_;
};

}  // namespace clipper
