#include "cwdedup/messages.h"

#include <fmt/format.h>

namespace cwdedup {

MsgKind kind_of(const Payload& p) {
  return static_cast<MsgKind>(p.index());
}

std::string_view kind_name(MsgKind kind) {
  switch (kind) {
    case MsgKind::kLookup: return "LOOKUP";
    case MsgKind::kWriteChunk: return "WRITE_CHUNK";
    case MsgKind::kReadChunk: return "READ_CHUNK";
    case MsgKind::kInc: return "INC";
    case MsgKind::kDec: return "DEC";
    case MsgKind::kSetFlag: return "SET_FLAG";
    case MsgKind::kMoveChunk: return "MOVE_CHUNK";
    case MsgKind::kOmapPut: return "OMAP_PUT";
    case MsgKind::kOmapGet: return "OMAP_GET";
    case MsgKind::kOmapDel: return "OMAP_DEL";
    case MsgKind::kRefTally: return "REF_TALLY";
    case MsgKind::kPutObject: return "PUT_OBJECT";
    case MsgKind::kGetObject: return "GET_OBJECT";
    case MsgKind::kDelObject: return "DEL_OBJECT";
    case MsgKind::kReply: return "REPLY";
  }
  return "?";
}

namespace {

std::string node_str(NodeId id) {
  return id == kClientId ? std::string("client") : fmt::format("{}", id.value);
}

struct Describe {
  std::string operator()(const msg::Lookup& m) const { return m.fp.hex(); }
  std::string operator()(const msg::WriteChunk& m) const {
    return fmt::format("{} len={} txn={}", m.fp.hex(), m.data.length, m.txn);
  }
  std::string operator()(const msg::ReadChunk& m) const { return m.fp.hex(); }
  std::string operator()(const msg::Inc& m) const { return m.fp.hex(); }
  std::string operator()(const msg::Dec& m) const { return m.fp.hex(); }
  std::string operator()(const msg::SetFlag& m) const {
    return fmt::format("{} flag={}", m.fp.hex(), static_cast<int>(m.flag));
  }
  std::string operator()(const msg::MoveChunk& m) const {
    return fmt::format("{} data={} cit={}", m.fp.hex(), m.data.has_value(),
                       m.cit ? fmt::format("{}/{}", m.cit->refcount,
                                           static_cast<int>(m.cit->flag))
                             : std::string("-"));
  }
  std::string operator()(const msg::OmapPut& m) const {
    return m.entry.object_fp.hex();
  }
  std::string operator()(const msg::OmapGet& m) const { return m.object_fp.hex(); }
  std::string operator()(const msg::OmapDel& m) const { return m.object_fp.hex(); }
  std::string operator()(const msg::RefTally& m) const {
    return fmt::format("entries={}", m.counts.size());
  }
  std::string operator()(const msg::PutObject& m) const {
    return fmt::format("{} len={}", m.name, m.data.length);
  }
  std::string operator()(const msg::GetObject& m) const { return m.name; }
  std::string operator()(const msg::DelObject& m) const { return m.name; }
  std::string operator()(const msg::Reply& m) const {
    return m.ok() ? std::string("ok")
                  : fmt::format("error={}", errc_name(*m.error));
  }
};

}  // namespace

std::string describe(const Envelope& env) {
  return fmt::format("#{} {} {}->{} e{} {}{}", env.id,
                     kind_name(kind_of(env.payload)), node_str(env.from),
                     node_str(env.to), env.epoch,
                     env.reply_to ? fmt::format("re#{} ", env.reply_to) : "",
                     std::visit(Describe{}, env.payload));
}

}  // namespace cwdedup
