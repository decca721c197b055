"""
Data files bundled with the package: run configurations (*.config, JSON), the worked-example draw history and the JSON
schemas of the files the command line tools emit.
"""

from miniOversubscription.Utilities.File import File


def bundled(file_name: str) -> File:
    data = File(__file__)
    data.bind(file_name)
    return data
