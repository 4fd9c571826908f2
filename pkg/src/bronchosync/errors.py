"""Shared exception types."""


class BronchoSyncError(Exception):
    """Base class for all toolkit errors."""


class PhantomSpecError(BronchoSyncError):
    """Invalid phantom specification (empty, out of bounds, malformed)."""


class CenterlineError(BronchoSyncError):
    """Centerline extraction failed (empty mask, non-tree topology)."""


class RenderError(BronchoSyncError):
    """Rendering precondition violated (camera outside airway, bad FOV)."""


class ExamSynthError(BronchoSyncError):
    """Exam synthesis failed (invalid spec, pose escaped the lumen)."""


class FrameStoreError(BronchoSyncError):
    """Frame container error (dimension mismatch, bad index, corrupt file)."""


class RegistrationError(BronchoSyncError):
    """Registration precondition or correction failure."""


class SyncError(BronchoSyncError):
    """Synchronization engine error (empty index, mode violation)."""


class UnsupportedModeError(SyncError):
    """Operation not available in the current playback mode."""


class ProjectError(BronchoSyncError):
    """Project manifest invalid or referenced artifacts missing/stale."""
