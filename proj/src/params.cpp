#include "clipper/params.hpp"

#include "clipper/error.hpp"

namespace clipper {

ad::Parameter& ParamStore::create(std::string name, ad::Shape shape,
                                  std::vector<double> init) {
  if (index_.count(name))
    throw ContractError("parameter '" + name + "' already exists");
  if (init.size() != shape.numel())
    throw ShapeError("parameter '" + name + "' init size mismatch for " +
                     shape.str());
  params_.push_back(ad::Parameter{name, std::move(shape), std::move(init)});
  index_[params_.back().name] = &params_.back();
  return params_.back();
}

ad::Parameter& ParamStore::create_trunc_normal(std::string name,
                                               ad::Shape shape, Rng& rng,
                                               double scale) {
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = rng.truncated_normal(scale);
  return create(std::move(name), std::move(shape), std::move(v));
}

ad::Parameter& ParamStore::create_fill(std::string name, ad::Shape shape,
                                       double fill) {
  std::vector<double> v(shape.numel(), fill);
  return create(std::move(name), std::move(shape), std::move(v));
}

ad::Parameter& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ContractError("unknown parameter '" + name + "'");
  return *it->second;
}

const ad::Parameter& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ContractError("unknown parameter '" + name + "'");
  return *it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return index_.count(name) > 0;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

}  // namespace clipper
