import os
import sys
from datetime import datetime, timedelta
import atexit
import shutil
import yaml
from typing import Optional

from ..errors import ConfigError


def load_params(param_file: str) -> dict:
    """
    Reads a YAML parameter card into a dictionary.
    """
    try:
        with open(param_file) as f:
            params = yaml.load(f, Loader=yaml.FullLoader)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read parameter card {param_file}: {e}") from e
    if not isinstance(params, dict):
        raise ConfigError(f"parameter card {param_file} does not hold a mapping")
    return params


class Documenter:
    """
    Makes runs self-documenting. The parameter card, the log file and every produced
    table, plot, proof or key are saved into one output folder.
    """

    @staticmethod
    def from_param_file(
        param_file: str, verb: str, output_root: Optional[str] = None
    ) -> tuple["Documenter", dict]:
        """
        Create a documenter named after the run_name in param_file and the verb, and copy
        the parameter file into the output folder.
        Args:
            param_file: Path to the YAML parameter file
            verb: Command that is run, appended to the folder name
            output_root: Base directory, defaults to output/ next to the package
        Returns:
            doc: Created documenter object
            params: Dictionary with the loaded parameters
        """
        params = load_params(param_file)
        doc = Documenter(
            f"{params.get('run_name', 'run')}_{verb}", params.get("run_folder"), output_root
        )
        shutil.copy(param_file, doc.add_file("params.yaml"))
        return doc, params

    def __init__(
        self,
        run_name: str,
        run_folder: Optional[str] = None,
        output_root: Optional[str] = None,
        tee: bool = True,
    ):
        """
        Creates a new output folder named as run_name prefixed by date and time. stdout
        and stderr are copied into a log file until close is called, which also happens
        automatically when the program exits.
        Args:
            run_name: Used to name the output folder of the run
            run_folder: Optional subfolder of the output directory
            output_root: Base directory, defaults to output/ next to the package
            tee: Copy stdout and stderr to log.txt
        """
        self.run_name = run_name
        if output_root is None:
            script_dir = os.path.dirname(os.path.abspath(__file__))
            output_root = os.path.join(script_dir, "..", "..", "output")
        base_dir_parts = [output_root]
        if run_folder is not None:
            base_dir_parts.append(run_folder)
        now = datetime.now()
        while True:
            full_run_name = now.strftime("%Y%m%d_%H%M%S") + "_" + run_name
            self.basedir = os.path.join(*base_dir_parts, full_run_name)
            try:
                os.makedirs(self.basedir)
                break
            except FileExistsError:
                now += timedelta(seconds=1)

        self.tee = None
        if tee:
            self.tee = Tee(self.add_file("log.txt"))
            atexit.register(self.close)

    def add_file(self, name: str) -> str:
        """
        Returns the path in the output folder for a file with the given name. If a file with
        the same name already exists in the output folder, it is moved to a subfolder 'old'.
        Args:
            name: File name
        Returns:
            Path to the file in the output folder
        """
        new_file = self.get_file(name)
        old_dir = os.path.join(self.basedir, "old")
        if os.path.exists(new_file):
            os.makedirs(old_dir, exist_ok=True)
            shutil.move(new_file, os.path.join(old_dir, os.path.basename(new_file)))
        return new_file

    def get_file(self, name: str) -> str:
        return os.path.join(self.basedir, name)

    def close(self):
        """
        Ends redirection of stdout and stderr.
        """
        if self.tee is not None:
            self.tee.close()
            self.tee = None


class Tee:
    """
    Replaces stdout and stderr, writing all printed data to the original stdout as well
    as a log file.
    """

    def __init__(self, log_file: str):
        self.log_file = open(log_file, "w")
        self.stdout = sys.stdout
        self.stderr = sys.stderr
        sys.stdout = self
        sys.stderr = self

    def close(self):
        sys.stdout = self.stdout
        sys.stderr = self.stderr
        self.log_file.close()

    def write(self, data):
        if not self.log_file.closed:
            self.log_file.write(data)
        self.stdout.write(data)

    def flush(self):
        if not self.log_file.closed:
            self.log_file.flush()
        self.stdout.flush()

    def isatty(self) -> bool:
        return False
