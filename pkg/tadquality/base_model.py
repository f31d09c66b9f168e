from pydantic import BaseModel as _BaseModel
from pydantic import Extra


class BaseModel(_BaseModel, extra=Extra.forbid, anystr_strip_whitespace=True):
    """Schema base for annotation, detection, manifest and tensor files

    Unknown keys are errors, so a misspelled field never passes silently.
    """
