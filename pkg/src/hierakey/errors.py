"""Exception taxonomy shared by all hierakey layers."""


class HierakeyError(Exception):
    """Base class for every error raised by this package."""


# --- crypto ---------------------------------------------------------------

class AuthError(HierakeyError):
    """AEAD verification failed: tampered data, wrong key, or wrong nonce/aad."""


class LabelUnknown(HierakeyError):
    """KDF label outside the fixed domain-separation set."""


class UnknownSuite(HierakeyError):
    """No crypto provider registered under the requested suite id."""


# --- wire -----------------------------------------------------------------

class FieldTooLong(HierakeyError):
    """An encode-side field exceeds its wire limit."""


class ParseError(HierakeyError):
    """Strict decode rejection. `reason` is one of the fixed reason strings."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


# --- hierarchy ------------------------------------------------------------

class UnknownEntity(HierakeyError):
    pass


class DuplicateRegistration(HierakeyError):
    """Id already present (Active or Revoked); re-registration is forbidden."""


class RoleViolation(HierakeyError):
    """Registrar role may not register the requested child role."""


class RegistrarRevoked(HierakeyError):
    pass


class RevokedEntity(HierakeyError):
    pass


class CrossHeadAssociation(HierakeyError):
    """Node and cluster head live under different heads."""


class NotRegistrar(HierakeyError):
    pass


class SelfPath(HierakeyError):
    pass


class NoCommonMediator(HierakeyError):
    pass


class NotFound(HierakeyError):
    pass


class FormatError(HierakeyError):
    """Keystore file rejected: bad magic, version, truncation, or checksum."""


class InstallationSealed(HierakeyError):
    """New registrations refused after the installation phase was sealed."""


# --- protocol -------------------------------------------------------------

class LinkUnavailable(HierakeyError):
    """No shared secret exists with the peer, so no link can be built."""


class ReplayDetected(HierakeyError):
    pass


class StaleSequence(HierakeyError):
    """Incoming sequence number at or below the receive high-water mark."""


class NonceMismatch(HierakeyError):
    pass


class PathViolation(HierakeyError):
    """Message inconsistent with the resolved mediation path."""


class NoSession(HierakeyError):
    """No confirmed end-to-end session with the peer."""


# --- simnet ---------------------------------------------------------------

class QueueEmpty(HierakeyError):
    pass


class BadScript(HierakeyError):
    """Adversary script references a transcript entry that does not exist."""


# --- scenario -------------------------------------------------------------

class ScenarioError(HierakeyError):
    """Parse-time scenario rejection, carrying the offending line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class SyntaxErrorLine(ScenarioError):
    pass


class UnknownDirective(ScenarioError):
    pass


class ForwardReference(ScenarioError):
    pass


# Wire-level error codes carried in ERROR messages.
ERR_AUTH_FAILURE = 0x0001
ERR_REVOKED_ENTITY = 0x0002
ERR_REPLAY_DETECTED = 0x0003
ERR_PATH_VIOLATION = 0x0004
ERR_UNKNOWN_ENTITY = 0x0005

ERROR_NAMES = {
    ERR_AUTH_FAILURE: "AuthFailure",
    ERR_REVOKED_ENTITY: "RevokedEntity",
    ERR_REPLAY_DETECTED: "ReplayDetected",
    ERR_PATH_VIOLATION: "PathViolation",
    ERR_UNKNOWN_ENTITY: "UnknownEntity",
}
