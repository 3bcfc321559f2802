#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vfl/vec.hpp"

namespace vfl {

// Protocol payloads. No message type ever carries covariate blocks x_j or
// client parameters theta_j; that boundary is what the privacy tests pin.
enum class MsgTag : std::uint8_t {
  AuxUpdate = 1,       // client -> server: z_j
  ServerZGrad = 2,     // server -> client j: dL0/dz_j
  AuxBroadcast = 3,    // server -> clients: all z blocks (+ gamma sample)
  CrossGrad = 4,       // client -> server: {target k -> dL0j/dz_k} (+ gamma grads)
  CrossGradSum = 5,    // server -> client j: sum_{k != j} dL0k/dz_j
  SharedParamGrad = 6, // client -> server: dL/dgamma contributions
  Control = 7,         // start / stop / checkpoint verbs
  ThetaSummary = 8,    // client -> server: conditional chain summary (SOUL)
  SigmaGrad = 9,       // client -> server: shared-sigma gradient piece (SOUL)
};

const char* msg_tag_name(MsgTag tag);

struct Message {
  MsgTag tag = MsgTag::Control;
  std::uint64_t run_id = 0;
  std::uint64_t iteration = 0;
  std::int32_t from = -1;  // actor id: 0 = server, j+1 = client j
  std::int32_t to = -1;
  std::int32_t subject = -1;  // client index the payload refers to, when meaningful
  Vec payload;
  Vec shared;                          // shared-parameter piggyback (sample or gradient)
  std::map<std::int32_t, Vec> sections;  // per-target blocks (CrossGrad, AuxBroadcast)
  std::string note;                    // Control verb
};

// Length-prefixed binary codec; the exact byte layout is documented in the
// README's wire-format section and must not drift from it.
std::vector<std::uint8_t> encode_message(const Message& msg);
Message decode_message(const std::uint8_t* data, std::size_t len);

// One-line JSON record for message logs.
std::string message_to_json(const Message& msg);

}  // namespace vfl
