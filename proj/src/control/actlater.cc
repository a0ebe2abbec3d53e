#include <algorithm>

#include "ubcsim/control.h"
#include "ubcsim/error.h"

namespace ubcsim {

Actlater::Actlater(CommandDispatcher& dispatcher) : dispatcher_(dispatcher) {}

void Actlater::Submit(ActionRequest request) {
  if (request.kind == ActionKind::kAdjustUbc) {
    throw Error(ErrorCode::kInvalidArgument,
                "limit adjustments are not queued");
  }
  queue_.push_back(std::move(request));
}

void Actlater::Pump() {
  if (pumping_) return;
  pumping_ = true;
  while (!in_flight_ && !queue_.empty()) {
    in_flight_ = std::move(queue_.front());
    queue_.pop_front();
    const ActionRequest started = *in_flight_;
    for (TransferObserver* o : observers_) o->OnStarted(started);
    const std::uint64_t id = started.request_id;
    dispatcher_.Dispatch(started, [this, id](const CommandResult& result) {
      Complete(id, result);
    });
  }
  pumping_ = false;
}

void Actlater::Complete(std::uint64_t request_id,
                        const CommandResult& result) {
  if (!in_flight_ || in_flight_->request_id != request_id) return;
  const ActionRequest done = *in_flight_;
  in_flight_.reset();
  for (TransferObserver* o : observers_) {
    if (result.ok) {
      o->OnSucceeded(done);
    } else {
      o->OnFailed(done, result.reason);
    }
  }
  Pump();
}

void Actlater::AddObserver(TransferObserver* observer) {
  observers_.push_back(observer);
}

void Actlater::RemoveObserver(TransferObserver* observer) {
  observers_.erase(std::remove(observers_.begin(), observers_.end(), observer),
                   observers_.end());
}

std::set<std::string> Actlater::BusyNodes() const {
  std::set<std::string> busy;
  if (in_flight_) {
    for (auto& n : in_flight_->InvolvedNodes()) busy.insert(n);
  }
  return busy;
}

std::set<std::string> Actlater::PendingContainers() const {
  std::set<std::string> pending;
  if (in_flight_) pending.insert(in_flight_->container_id);
  for (const auto& r : queue_) pending.insert(r.container_id);
  return pending;
}

std::string CsvField(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
    return std::string(field);
  }
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

std::vector<ActionLogEntry> ActionLog::Issued(const std::string& kind) const {
  std::vector<ActionLogEntry> out;
  for (const auto& e : entries_) {
    if (e.kind == kind && e.outcome == "issued") out.push_back(e);
  }
  return out;
}

void ActionLog::WriteCsv(std::ostream& out) const {
  out << "time_ms,kind,container,source,target,outcome\n";
  for (const auto& e : entries_) {
    out << e.time_ms << ',' << CsvField(e.kind) << ','
        << CsvField(e.container) << ',' << CsvField(e.source) << ','
        << CsvField(e.target) << ',' << CsvField(e.outcome) << '\n';
  }
}

}  // namespace ubcsim
