// Serialization order of model tensors. Changing it changes the checkpoint
// format; bump kCheckpointFormatVersion when doing so.

#include <string>

namespace alure {

namespace detail {

template <typename Self, typename Fn>
void visit_feature(Self& self, Fn& fn) {
  auto emit = [&fn](const std::string& name, auto& t) {
    if (t.size() > 0) fn(name, t);
  };
  for (std::size_t s = 0; s < self.sources.size(); ++s) {
    auto& src = self.sources[s];
    const std::string p = "source" + std::to_string(s) + ".";
    emit(p + "token_embedding", src.token_embedding);
    emit(p + "cfee.decay_weight", src.cfee.decay_weight);
    emit(p + "cfee.decay_bias", src.cfee.decay_bias);
    emit(p + "cfee.relpos_table", src.cfee.relpos_table);
    emit(p + "cfee.time_bias_table", src.cfee.time_bias_table);
    for (std::size_t l = 0; l < src.layers.size(); ++l) {
      auto& L = src.layers[l];
      const std::string q = p + "layer" + std::to_string(l + 1) + ".";
      emit(q + "wq", L.wq);
      emit(q + "wk", L.wk);
      emit(q + "wv", L.wv);
      emit(q + "wo", L.wo);
      emit(q + "ln1_gain", L.ln1_gain);
      emit(q + "ln1_bias", L.ln1_bias);
      emit(q + "ln2_gain", L.ln2_gain);
      emit(q + "ln2_bias", L.ln2_bias);
      emit(q + "ffn_w1", L.ffn_w1);
      emit(q + "ffn_b1", L.ffn_b1);
      emit(q + "ffn_w2", L.ffn_w2);
      emit(q + "ffn_b2", L.ffn_b2);
    }
    emit(p + "cross_wq", src.cross_wq);
    emit(p + "cross_wk", src.cross_wk);
    emit(p + "cross_wv", src.cross_wv);
    emit(p + "cross_wo", src.cross_wo);
    emit(p + "empty_placeholder", src.empty_placeholder);
  }
  emit("cross_queries", self.cross_queries);
  auto& c = self.compression;
  emit("compression.linear_w", c.linear_w);
  emit("compression.linear_b", c.linear_b);
  emit("compression.dot_w", c.dot_w);
  emit("compression.dot_b", c.dot_b);
  emit("compression.queries", c.queries);
  emit("compression.wq", c.wq);
  emit("compression.wk", c.wk);
  emit("compression.wv", c.wv);
  emit("compression.wo", c.wo);
}

}  // namespace detail

template <typename Fn>
void FeatureParams::visit(Fn&& fn) {
  detail::visit_feature(*this, fn);
}

template <typename Fn>
void FeatureParams::visit(Fn&& fn) const {
  detail::visit_feature(*this, fn);
}

template <typename Fn>
void ModelParams::visit(Fn&& fn) {
  feature.visit(fn);
  if (account_embedding.size() > 0) fn(std::string("account_embedding"), account_embedding);
}

template <typename Fn>
void ModelParams::visit(Fn&& fn) const {
  feature.visit(fn);
  if (account_embedding.size() > 0) fn(std::string("account_embedding"), account_embedding);
}

}  // namespace alure
