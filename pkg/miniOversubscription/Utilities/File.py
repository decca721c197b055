"""
File wraps every file the package touches: bundled data files that live next to the
package's modules (configurations, fixtures, schemas), and the output files of the command line tools (metrics JSON,
capping-event CSV, draw histories).

A bundled file is bound relative to a caller: pass the __file__ of the module the data file sits next to, then
.bind() the relative name.

    >>> config = File(__file__)
    >>> config.bind('Database/fleet.config')
    >>> data = config.read_json()

Output files are bound with .bind_output(). Their directory is the one given by the caller (the working directory by
default). When the environment variable MINIOVERSUB_OUTPUT_DIR is set, relative directories are placed under it. This
is the only environment variable the package reads.

NOTE: before working with the file, it is necessary to call .bind() or .bind_output().
"""


import json
import os
from pathlib import Path
from typing import Any, List, Optional

import pandas as pd

from miniOversubscription.Utilities.UtilityExceptions import FileNotBound, FileNotFound


OUTPUT_DIR_VARIABLE = 'MINIOVERSUB_OUTPUT_DIR'


def output_directory(default: Optional[str] = None) -> Path:
    """Directory for relative output paths: the given one (or the cwd), under $MINIOVERSUB_OUTPUT_DIR when it is set."""
    root = os.environ.get(OUTPUT_DIR_VARIABLE)
    if root:
        return Path(root) / default if default else Path(root)
    return Path(default) if default else Path.cwd()


class File:
    # ==================================================================================================== MAGIC METHODS
    def __init__(self, caller: str = __file__) -> None:
        """
        :param caller: The __file__ variable of the .py file next to which the bundled file lives. If left unfilled,
        paths are resolved next to this module (the Utilities directory).
        """

        self._caller = Path(caller)
        self._caller_dir = self._caller.resolve().parent
        self._file: Optional[Path] = None

        self._tests = {
            "file bound": self._file_bound_test,
            "file exists": self._file_exists_test,
        }

    def __str__(self):
        return self.read_text()

    # =================================================================================================== METHOD TESTING
    def _test_for(self, tests: List[str], **kwargs: Any) -> bool:
        return all(self._tests[test](**kwargs) for test in tests)

    def _file_bound_test(self, *, raise_exception: bool = True, **kwargs: Any) -> bool:
        if self._file is None:
            if raise_exception:
                raise FileNotBound(variables=locals())
            return False
        return True

    def _file_exists_test(self, *, raise_exception: bool = True, **kwargs: Any) -> bool:
        if not self._file.exists():
            if raise_exception:
                raise FileNotFound(file_name=str(self._file), variables=locals())
            return False
        return True

    # =================================================================================================== PUBLIC METHODS
    def bind(self, file_name: str) -> None:
        """
        Binds a bundled file located relative to the caller's directory. Absolute paths are bound as they are. Unlike
        .bind_output(), nothing is created: a bundled file that is missing is an error as soon as it is read.
        """

        path = Path(file_name)
        self._file = path if path.is_absolute() else self._caller_dir / path

    def bind_input(self, file_name: str) -> None:
        """Binds a file named by the user. Relative names are resolved against the working directory."""
        self._file = Path(file_name).resolve()

    def bind_output(self, file_name: str, directory: Optional[str] = None) -> Path:
        """
        Binds an output file. Relative names are placed under output_directory(directory). The parent directories
        are created. Returns the bound path.
        """

        path = Path(file_name)
        if not path.is_absolute():
            path = output_directory(directory) / path
        path.parent.mkdir(parents=True, exist_ok=True)
        self._file = path
        return path

    def read_text(self) -> str:
        self._test_for(['file bound', 'file exists'])
        return self._file.read_text()

    def read_json(self) -> Any:
        return json.loads(self.read_text())

    def read_frame(self, **read_csv_kwargs: Any) -> pd.DataFrame:
        self._test_for(['file bound', 'file exists'])
        return pd.read_csv(self._file, **read_csv_kwargs)

    def write_text(self, text: str) -> None:
        self._test_for(['file bound'])
        self._file.write_text(text)

    def write_json(self, data: Any) -> None:
        """Writes canonical JSON (sorted keys, fixed indentation) so that identical data gives identical bytes."""
        self.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n')

    def write_frame(self, frame: pd.DataFrame) -> None:
        self._test_for(['file bound'])
        frame.to_csv(self._file, index=False)

    # ======================================================================================================= PROPERTIES
    @property
    def caller_directory(self) -> Path:
        return self._caller_dir

    @property
    def name(self) -> str:
        self._test_for(['file bound'])
        return self._file.name

    @property
    def path(self) -> Path:
        self._test_for(['file bound'])
        return self._file
