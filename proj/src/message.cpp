#include "vfl/message.hpp"

#include <cstring>

#include "json.hpp"

namespace vfl {

const char* msg_tag_name(MsgTag tag) {
  switch (tag) {
    case MsgTag::AuxUpdate:
      return "aux_update";
    case MsgTag::ServerZGrad:
      return "server_z_grad";
    case MsgTag::AuxBroadcast:
      return "aux_broadcast";
    case MsgTag::CrossGrad:
      return "cross_grad";
    case MsgTag::CrossGradSum:
      return "cross_grad_sum";
    case MsgTag::SharedParamGrad:
      return "shared_param_grad";
    case MsgTag::Control:
      return "control";
    case MsgTag::ThetaSummary:
      return "theta_summary";
    case MsgTag::SigmaGrad:
      return "sigma_grad";
  }
  return "?";
}

namespace {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_i32le(std::vector<std::uint8_t>& out, std::int32_t v) {
  put_u32le(out, static_cast<std::uint32_t>(v));
}

void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64le(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64le(out, bits);
}

struct Reader {
  const std::uint8_t* p;
  const std::uint8_t* end;

  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) throw ProtocolError("message: truncated payload");
  }
  std::uint8_t u8() {
    need(1);
    return *p++;
  }
  std::uint32_t u32le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }
  std::int32_t i32le() { return static_cast<std::int32_t>(u32le()); }
  std::uint64_t u64le() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    return v;
  }
  double f64le() {
    const std::uint64_t bits = u64le();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

constexpr std::int32_t kPayloadSection = -1;
constexpr std::int32_t kSharedSection = -2;

}  // namespace

std::vector<std::uint8_t> encode_message(const Message& msg) {
  std::vector<std::uint8_t> body;
  put_u8(body, static_cast<std::uint8_t>(msg.tag));
  put_u64le(body, msg.run_id);
  put_u64le(body, msg.iteration);
  put_i32le(body, msg.from);
  put_i32le(body, msg.to);
  put_i32le(body, msg.subject);
  put_u32le(body, static_cast<std::uint32_t>(msg.note.size()));
  body.insert(body.end(), msg.note.begin(), msg.note.end());

  std::uint32_t num_sections = static_cast<std::uint32_t>(msg.sections.size());
  if (!msg.payload.empty()) ++num_sections;
  if (!msg.shared.empty()) ++num_sections;
  put_u32le(body, num_sections);
  auto put_section = [&](std::int32_t id, const Vec& v) {
    put_i32le(body, id);
    put_u32le(body, static_cast<std::uint32_t>(v.size()));
    for (double d : v) put_f64le(body, d);
  };
  if (!msg.payload.empty()) put_section(kPayloadSection, msg.payload);
  if (!msg.shared.empty()) put_section(kSharedSection, msg.shared);
  for (const auto& [id, v] : msg.sections) put_section(id, v);

  std::vector<std::uint8_t> out;
  // 4-byte big-endian length prefix.
  const std::uint32_t len = static_cast<std::uint32_t>(body.size());
  out.push_back(static_cast<std::uint8_t>(len >> 24));
  out.push_back(static_cast<std::uint8_t>(len >> 16));
  out.push_back(static_cast<std::uint8_t>(len >> 8));
  out.push_back(static_cast<std::uint8_t>(len));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

Message decode_message(const std::uint8_t* data, std::size_t len) {
  Reader r{data, data + len};
  Message msg;
  msg.tag = static_cast<MsgTag>(r.u8());
  msg.run_id = r.u64le();
  msg.iteration = r.u64le();
  msg.from = r.i32le();
  msg.to = r.i32le();
  msg.subject = r.i32le();
  const std::uint32_t note_len = r.u32le();
  r.need(note_len);
  msg.note.assign(reinterpret_cast<const char*>(r.p), note_len);
  r.p += note_len;
  const std::uint32_t num_sections = r.u32le();
  for (std::uint32_t s = 0; s < num_sections; ++s) {
    const std::int32_t id = r.i32le();
    const std::uint32_t count = r.u32le();
    Vec v(count);
    for (std::uint32_t i = 0; i < count; ++i) v[i] = r.f64le();
    if (id == kPayloadSection)
      msg.payload = std::move(v);
    else if (id == kSharedSection)
      msg.shared = std::move(v);
    else
      msg.sections[id] = std::move(v);
  }
  return msg;
}

std::string message_to_json(const Message& msg) {
  nlohmann::json j;
  j["tag"] = msg_tag_name(msg.tag);
  j["run_id"] = msg.run_id;
  j["iteration"] = msg.iteration;
  j["from"] = msg.from;
  j["to"] = msg.to;
  j["subject"] = msg.subject;
  if (!msg.note.empty()) j["note"] = msg.note;
  if (!msg.payload.empty()) j["payload"] = msg.payload;
  if (!msg.shared.empty()) j["shared"] = msg.shared;
  if (!msg.sections.empty()) {
    nlohmann::json sec;
    for (const auto& [id, v] : msg.sections) sec[std::to_string(id)] = v;
    j["sections"] = sec;
  }
  return j.dump();
}

}  // namespace vfl
