#include "fusionbench/trainer.hpp"

#include "fusionbench/metrics.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace fusionbench {

void Schedule::validate() const {
    if (total_epochs < 1) throw ConfigError("schedule: total_epochs must be at least 1");
    if (warmup_epochs >= total_epochs) {
        throw ConfigError("schedule: warmup_epochs must be smaller than total_epochs");
    }
    if (batch_size < 1) throw ConfigError("schedule: batch_size must be at least 1");
    optimizer.validate();
}

bool trains_in_phase(std::string_view group, int phase) {
    const GroupRole role = group_role(group);
    if (phase == 1) return role == GroupRole::clinical_encoder || role == GroupRole::clinical_head;
    return role != GroupRole::clinical_encoder;
}

std::string TrainHistory::to_jsonl(bool with_timing) const {
    std::string out;
    for (const auto& e : epochs) {
        nlohmann::ordered_json j;
        j["epoch"] = e.epoch;
        j["phase"] = e.phase;
        j["loss"] = e.loss;
        nlohmann::ordered_json terms = nlohmann::ordered_json::object();
        for (const auto& [name, v] : e.terms) terms[name] = v;
        j["terms"] = terms;
        j["val_auc"] = e.val_auc ? nlohmann::ordered_json(*e.val_auc) : nlohmann::ordered_json();
        j["class_counts"] = {e.resampled_negatives, e.resampled_positives};
        if (with_timing) j["seconds"] = e.seconds;
        out += j.dump();
        out += '\n';
    }
    return out;
}

namespace {

void drop_mse_terms(LossBreakdown<float>& loss) {
    for (auto it = loss.terms.begin(); it != loss.terms.end();) {
        if (!it->is_mse) {
            ++it;
            continue;
        }
        const Output o = it->output;
        std::erase_if(loss.grads, [o](const auto& g) { return g.first == o; });
        it = loss.terms.erase(it);
    }
    loss.total = 0.0;
    for (const auto& t : loss.terms) loss.total += t.value;
}

} // namespace

std::vector<double> predict(Model<float>& model, const Dataset& data, std::size_t batch_size) {
    std::vector<double> scores;
    scores.reserve(data.size());
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t lo = 0; lo < idx.size(); lo += batch_size) {
        const std::span<const std::size_t> batch(idx.data() + lo, std::min(batch_size, idx.size() - lo));
        const auto out = model.forward(make_bag_batch<float>(data, batch),
                                       make_clinical_batch<float>(data, batch), Mode::eval);
        for (float p : out.y_hat().values()) scores.push_back(p);
    }
    return scores;
}

TrainHistory train_fold(Model<float>& model, const Dataset& train, const Dataset& val,
                        const Schedule& schedule, std::uint64_t seed,
                        const EpochCallback& on_epoch_end) {
    schedule.validate();
    const std::vector<int> labels = train.labels();
    std::vector<std::size_t> all(train.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const std::vector<int> val_labels = val.labels();
    const bool val_has_both =
        std::find(val_labels.begin(), val_labels.end(), 0) != val_labels.end() &&
        std::find(val_labels.begin(), val_labels.end(), 1) != val_labels.end();

    AdamW<float> optimizer(schedule.optimizer);
    TrainHistory history;
    for (std::size_t epoch = 1; epoch <= schedule.total_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        const int phase = schedule.phase(epoch);
        model.set_trainable([phase](std::string_view g) { return trains_in_phase(g, phase); });

        Rng rng(Rng::derive(seed, epoch));
        const auto order = balanced_resample(all, labels, rng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.phase = phase;
        for (std::size_t i : order) (labels[i] ? rec.resampled_positives : rec.resampled_negatives) += 1;
        std::vector<double> term_sums;
        std::size_t batch_no = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += schedule.batch_size, ++batch_no) {
            const std::span<const std::size_t> batch(order.data() + lo,
                                                     std::min(schedule.batch_size, order.size() - lo));
            std::vector<int> batch_labels;
            batch_labels.reserve(batch.size());
            for (std::size_t i : batch) batch_labels.push_back(labels[i]);
            Tensor<float> clinical = make_clinical_batch<float>(train, batch);

            const auto context = [&] {
                return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) + ": ";
            };
            LossBreakdown<float> loss;
            try {
                const auto out = model.forward(make_bag_batch<float>(train, batch), clinical,
                                               Mode::train, &rng);
                loss = total_loss(out, batch_labels, clinical, model.config());
                if (phase == 1) drop_mse_terms(loss);
                if (!std::isfinite(loss.total)) throw NumericError("loss is not finite");
                model.zero_grad();
                model.backward(loss.grads);
                optimizer.step(model.graph().params());
            } catch (const NumericError& e) {
                throw NumericError(context() + e.what());
            }

            const double w = static_cast<double>(batch.size());
            rec.loss += w * loss.total;
            term_sums.resize(loss.terms.size(), 0.0);
            for (std::size_t t = 0; t < loss.terms.size(); ++t) term_sums[t] += w * loss.terms[t].value;
            if (rec.terms.empty()) {
                for (const auto& t : loss.terms) rec.terms.emplace_back(std::string(output_name(t.output)), 0.0);
            }
        }
        const double n = static_cast<double>(order.size());
        rec.loss /= n;
        for (std::size_t t = 0; t < rec.terms.size(); ++t) rec.terms[t].second = term_sums[t] / n;

        if (val_has_both) {
            const auto scores = predict(model, val);
            rec.val_auc = auc(scores, val_labels);
        }
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        history.epochs.push_back(std::move(rec));
        if (on_epoch_end) on_epoch_end(epoch, model);
    }
    return history;
}

} // namespace fusionbench
