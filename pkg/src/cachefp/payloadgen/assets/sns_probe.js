/*
 * String-and-Sock probe loop.
 *
 * One probe pair = short frame out, a batch of substring searches over a
 * long ASCII string, short frame out. The needle is a fresh emoji sequence
 * for every search (the haystack is pure ASCII, so the search is
 * guaranteed to miss and scan the whole string), and all timing lives on
 * the remote socket end; this code never reads a clock.
 */
/*__CONFIG__*/

var EMOJI_BASE = 0x1f600;

function buildHaystack(chars) {
  var block = "abcdefghijklmnopqrstuvwxyz0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ+-";
  var s = block;
  while (s.length < chars) {
    s += s;
  }
  return s.slice(0, chars);
}

function emojiNeedle(counter, len) {
  // base-64 digits of the counter, so no needle repeats within a trace
  var cps = [];
  for (var i = 0; i < len; i++) {
    cps.push(EMOJI_BASE + (Math.floor(counter / Math.pow(64, i)) % 64));
  }
  return String.fromCodePoint.apply(null, cps);
}

function snsProbeLoop(config, deps) {
  // deps: sendProbe(), search(haystack, needle) -> index, isOpen()
  var haystack = deps.haystack || buildHaystack(config.string_chars);
  var counter = 0;
  var pairs = 0;
  while (deps.isOpen() && pairs < config.rounds) {
    deps.sendProbe();
    for (var j = 0; j < config.decimation_n; j++) {
      var needle = emojiNeedle(counter, config.needle_len);
      counter++;
      if (deps.search(haystack, needle) !== -1) {
        throw new Error("needle unexpectedly present in haystack");
      }
    }
    deps.sendProbe();
    pairs++;
  }
  return { pairs: pairs, searches: counter };
}

if (typeof window !== "undefined" && globalThis.__PROBE_CONFIG__ &&
    globalThis.__PROBE_CONFIG__.technique === "string_sock") {
  (function () {
    var config = globalThis.__PROBE_CONFIG__;
    var sock = new WebSocket(config.ws_url);
    sock.onopen = function () {
      snsProbeLoop(config, {
        sendProbe: function () { sock.send("p"); },
        search: function (h, n) { return h.indexOf(n); },
        isOpen: function () { return sock.readyState === 1; },
      });
      sock.close();
    };
  })();
}
